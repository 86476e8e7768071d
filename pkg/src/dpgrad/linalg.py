"""Orthonormal subspace bookkeeping and projection primitives.

Subspaces are stored as explicit orthonormal bases so that growing a span by
one vector is a cheap incremental update (Gram-Schmidt with a single
re-orthogonalization pass) instead of a fresh factorization. All scalars are
float64: the step sizes used downstream are cubic in the initialization scale
and would underflow in float32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

COLUMNS_ONTO = "columns-onto"
COLUMNS_COMPLEMENT = "columns-complement"
ROWS_ONTO = "rows-onto"
ROWS_COMPLEMENT = "rows-complement"

_SIDES = (COLUMNS_ONTO, COLUMNS_COMPLEMENT, ROWS_ONTO, ROWS_COMPLEMENT)

# Residual norm below which a candidate vector adds no new direction.
RESIDUAL_TOL = 1e-10
# Relative cutoff separating numerically-zero from nonzero singular values.
RANK_TOL = 1e-8


@dataclass(frozen=True)
class Subspace:
    """A subspace of R^ambient_dim held as orthonormal basis columns.

    ``basis`` has shape (ambient_dim, dim); dim may be zero (the trivial
    subspace), in which case projecting onto it yields zero and projecting
    onto its complement is the identity.
    """

    ambient_dim: int
    basis: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.basis, dtype=float)
        if b.ndim != 2 or b.shape[0] != self.ambient_dim:
            raise ValueError(
                f"basis must be ({self.ambient_dim}, dim), got {b.shape}"
            )
        if b.shape[1] > self.ambient_dim:
            raise ValueError("basis has more vectors than ambient dimensions")
        gram = b.T @ b
        if gram.size and np.max(np.abs(gram - np.eye(b.shape[1]))) > 1e-8:
            raise ValueError("basis columns are not orthonormal")
        object.__setattr__(self, "basis", b)

    @classmethod
    def empty(cls, ambient_dim: int) -> "Subspace":
        return cls(ambient_dim, np.zeros((ambient_dim, 0)))

    @property
    def dim(self) -> int:
        return self.basis.shape[1]


def add_vector(s: Subspace, v: np.ndarray, tol: float = RESIDUAL_TOL) -> Subspace:
    """Extend the span of ``s`` by one vector.

    Returns ``s`` unchanged when the residual of ``v`` against the current
    basis has norm <= tol (the vector adds no numerical rank).
    """
    v = np.asarray(v, dtype=float)
    if v.shape != (s.ambient_dim,):
        raise ValueError(f"vector has dimension {v.shape}, expected ({s.ambient_dim},)")
    if tol <= 0:
        raise ValueError("tol must be positive")
    b = s.basis
    u = v - b @ (b.T @ v)
    u = u - b @ (b.T @ u)
    norm = float(np.linalg.norm(u))
    if norm <= tol:
        return s
    return Subspace(s.ambient_dim, np.column_stack([b, u / norm]))


def orthonormal_basis(
    vectors, tol: float = RESIDUAL_TOL, *, ambient_dim: int | None = None
) -> Subspace:
    """Orthonormal basis of span(vectors), dropping numerically dependent inputs.

    ``ambient_dim`` is required when ``vectors`` is empty.
    """
    vectors = [np.asarray(v, dtype=float) for v in vectors]
    dims = {v.shape for v in vectors}
    if len(dims) > 1:
        raise ValueError(f"input vectors have mixed dimensions: {sorted(dims)}")
    if vectors:
        (dim,) = dims.pop()
    elif ambient_dim is not None:
        dim = ambient_dim
    else:
        raise ValueError("ambient_dim is required for an empty vector list")
    s = Subspace.empty(dim)
    for v in vectors:
        s = add_vector(s, v, tol)
    return s


def project(s: Subspace, m: np.ndarray, side: str) -> np.ndarray:
    """Project a matrix or vector onto ``s`` or its orthogonal complement.

    Column sides act on the columns of ``m`` (ambient dimension = number of
    rows); row sides act on the rows. A 1-D input is treated as a single
    vector for either orientation. Projections are idempotent and the onto /
    complement pair sums back to ``m`` exactly.
    """
    if side not in _SIDES:
        raise ValueError(f"side must be one of {_SIDES}, got {side!r}")
    m = np.asarray(m, dtype=float)
    if m.ndim not in (1, 2):
        raise ValueError("m must be a vector or a matrix")
    b = s.basis
    if m.ndim == 1 or side in (COLUMNS_ONTO, COLUMNS_COMPLEMENT):
        if m.shape[0] != s.ambient_dim:
            raise ValueError(
                f"dimension mismatch: m has leading dimension {m.shape[0]}, "
                f"subspace lives in R^{s.ambient_dim}"
            )
        onto = b @ (b.T @ m)
    else:
        if m.shape[1] != s.ambient_dim:
            raise ValueError(
                f"dimension mismatch: m has {m.shape[1]} columns, "
                f"subspace lives in R^{s.ambient_dim}"
            )
        onto = (m @ b) @ b.T
    if side in (COLUMNS_ONTO, ROWS_ONTO):
        return onto
    return m - onto


def nonzero_singular_bounds(m: np.ndarray, rank_tol: float = RANK_TOL) -> tuple[float, float]:
    """Smallest and largest singular values above rank_tol * sigma_max.

    Raises ValueError for an all-zero matrix (no nonzero singular values).
    """
    if rank_tol <= 0:
        raise ValueError("rank_tol must be positive")
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise ValueError("m must be a matrix")
    svals = np.linalg.svd(m, compute_uv=False)
    sigma_max = float(svals[0]) if svals.size else 0.0
    if sigma_max == 0.0:
        raise ValueError("matrix has no nonzero singular values")
    kept = svals[svals > rank_tol * sigma_max]
    return float(kept[-1]), sigma_max
