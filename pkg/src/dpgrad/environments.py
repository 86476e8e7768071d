"""Synthetic task-sequence generation and sampled-data counterparts.

Instances are built to satisfy the working assumptions exactly, not just
approximately: targets sit on the nu-grid, norms stay within D, and each new
task either reuses the running span or brings an orthogonal component with
norm in [1/D, D]. The trick is to build targets from integer combinations of
base vectors with disjoint coordinate supports, so orthogonality and grid
membership are exact by construction. A post-hoc validator re-checks
everything from the raw vectors without trusting the construction path.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .factorization import ProblemDims


class InfeasibleInstanceError(ValueError):
    """The requested instance parameters cannot be satisfied."""


@dataclass(frozen=True)
class GroundTruth:
    """One continual-learning instance: k targets in R^d plus its metadata.

    ``novel_flags[i]`` records whether task i brings a new direction.
    Invariants are not enforced at construction (deliberately broken
    instances are useful as negative examples); use :func:`validate_instance`.
    """

    dims: ProblemDims
    big_d: float
    nu: float
    w_list: np.ndarray  # (k, d)
    novel_flags: tuple[bool, ...]


@dataclass(frozen=True)
class SampleBatch:
    """n labelled samples from one task: rows of xs paired with ys."""

    xs: np.ndarray
    ys: np.ndarray
    task: int


def _draw_base(
    support: np.ndarray,
    d: int,
    nu: float,
    big_d: float,
    rng: np.random.Generator,
    max_attempts: int,
) -> np.ndarray:
    """Grid-exact base vector on the given support with norm in [1/D, D]."""
    lo, hi = 1.0 / big_d, big_d
    for _ in range(max_attempts):
        entries = rng.integers(-3, 4, size=support.size)
        if not entries.any():
            continue
        norm_a = math.sqrt(float(entries @ entries))
        # Leave headroom below D so later integer combinations stay in budget.
        target = rng.uniform(lo, min(hi, max(lo * 1.5, 0.7 * hi)))
        mult = max(1, round(target / (nu * norm_a)))
        norm_b = mult * nu * norm_a
        if lo <= norm_b <= hi:
            base = np.zeros(d)
            base[support] = mult * entries * nu
            return base
    raise InfeasibleInstanceError(
        "could not place a base vector with orthogonal norm in [1/D, D]; "
        "the grid pitch nu is too coarse for this D"
    )


def generate_instance(
    dims: ProblemDims,
    big_d: float,
    nu: float,
    novel_schedule,
    rng: np.random.Generator,
    max_attempts: int = 200,
) -> GroundTruth:
    """Construct an instance satisfying all assumptions exactly.

    Tasks flagged novel introduce one base vector each (orthogonal component
    in [1/D, D]); the rest are integer combinations of bases already in play
    (orthogonal component exactly zero). Raises InfeasibleInstanceError when
    the parameters cannot work (more novel tasks than r, coarse grid, or no
    norm-budget-respecting draw after max_attempts).
    """
    novel_schedule = tuple(bool(f) for f in novel_schedule)
    if len(novel_schedule) != dims.k:
        raise InfeasibleInstanceError(
            f"novel_schedule has length {len(novel_schedule)}, expected k={dims.k}"
        )
    n_novel = sum(novel_schedule)
    if n_novel > dims.r:
        raise InfeasibleInstanceError(
            f"{n_novel} novel tasks exceed the feature dimension r={dims.r}"
        )
    if big_d < 1.0:
        raise InfeasibleInstanceError("big_d must be >= 1 so that [1/D, D] is nonempty")
    if nu > 1.0 / (2.0 * big_d * math.sqrt(dims.d)):
        raise InfeasibleInstanceError(
            f"grid pitch nu={nu} too coarse; need nu <= 1/(2*D*sqrt(d))"
        )

    supports = np.array_split(np.arange(dims.d), dims.r)
    bases: list[np.ndarray] = []
    w_rows = []
    for i, novel in enumerate(novel_schedule):
        if novel:
            base = _draw_base(supports[len(bases)], dims.d, nu, big_d, rng, max_attempts)
            w = None
            for _ in range(max_attempts):
                coeffs = rng.integers(-1, 2, size=len(bases))
                cand = base + sum(c * b for c, b in zip(coeffs, bases)) if bases else base
                if float(np.linalg.norm(cand)) <= big_d:
                    w = cand
                    break
            if w is None:
                w = base  # always within budget on its own
            bases.append(base)
        else:
            if not bases:
                w = np.zeros(dims.d)
            else:
                w = None
                for _ in range(max_attempts):
                    coeffs = rng.integers(-2, 3, size=len(bases))
                    if not coeffs.any():
                        continue
                    cand = sum(c * b for c, b in zip(coeffs, bases))
                    if 0.0 < float(np.linalg.norm(cand)) <= big_d:
                        w = cand
                        break
                if w is None:
                    raise InfeasibleInstanceError(
                        f"no norm-feasible reuse combination found for task {i + 1}"
                    )
        w_rows.append(w)
    return GroundTruth(
        dims=dims,
        big_d=float(big_d),
        nu=float(nu),
        w_list=np.vstack(w_rows),
        novel_flags=novel_schedule,
    )


def validate_instance(gt: GroundTruth, tol: float = 1e-8) -> list[str]:
    """Re-check all instance invariants from the raw target vectors.

    Returns a list of violation messages (empty means valid). Uses an SVD
    span independent of the generator's bookkeeping.
    """
    issues = []
    k, d = gt.w_list.shape
    if (k, d) != (gt.dims.k, gt.dims.d):
        issues.append(f"w_list has shape {(k, d)}, dims say {(gt.dims.k, gt.dims.d)}")
        return issues
    for i, w in enumerate(gt.w_list):
        label = f"task {i + 1}"
        norm_w = float(np.linalg.norm(w))
        if norm_w > gt.big_d * (1 + 1e-12) + 1e-12:
            issues.append(f"{label}: ||w|| = {norm_w} exceeds D = {gt.big_d}")
        quotient = w / gt.nu
        if np.max(np.abs(quotient - np.round(quotient))) > 1e-6:
            issues.append(f"{label}: coordinates are not multiples of nu = {gt.nu}")
        prev = gt.w_list[:i]
        if prev.size:
            u, s, _ = np.linalg.svd(prev.T, full_matrices=False)
            span = u[:, s > tol * max(s[0], 1.0)]
            comp = float(np.linalg.norm(w - span @ (span.T @ w)))
        else:
            comp = norm_w
        if comp <= tol:
            if gt.novel_flags[i]:
                issues.append(f"{label}: flagged novel but orthogonal component is 0")
        elif 1.0 / gt.big_d - tol <= comp <= gt.big_d + tol:
            if not gt.novel_flags[i]:
                issues.append(f"{label}: flagged reuse but orthogonal component is {comp}")
        else:
            issues.append(
                f"{label}: orthogonal component {comp} outside {{0}} u [1/D, D]"
            )
    svals = np.linalg.svd(gt.w_list, compute_uv=False)
    if svals.size and svals[0] > 0:
        rank = int(np.sum(svals > tol * svals[0]))
        if rank > gt.dims.r:
            issues.append(f"targets have rank {rank} > r = {gt.dims.r}")
    return issues


def sample_batch(gt: GroundTruth, i: int, n: int, rng: np.random.Generator) -> SampleBatch:
    """Draw n i.i.d. standard normal inputs for task i (1-based); labels are
    exact inner products with the task target."""
    if not 1 <= i <= gt.dims.k:
        raise ValueError(f"task index {i} outside 1..{gt.dims.k}")
    if n < 1:
        raise ValueError("n must be at least 1")
    xs = rng.standard_normal((n, gt.dims.d))
    ys = xs @ gt.w_list[i - 1]
    return SampleBatch(xs=xs, ys=ys, task=i)


def empirical_gradients(
    batch: SampleBatch, U: np.ndarray, v: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Sample-average gradients of 0.5 * (x^T U v - y)^2 over the batch."""
    n = batch.xs.shape[0]
    resid = batch.xs @ (U @ v) - batch.ys
    g = batch.xs.T @ resid / n
    return np.outer(g, v), U.T @ g


def save_instance(path, gt: GroundTruth, seed: int) -> None:
    doc = {
        "d": gt.dims.d,
        "r": gt.dims.r,
        "k": gt.dims.k,
        "D": float(gt.big_d),
        "nu": float(gt.nu),
        "w_list": [[float(x) for x in w] for w in gt.w_list],
        "novel_flags": [bool(f) for f in gt.novel_flags],
        "seed": int(seed),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_instance(path) -> tuple[GroundTruth, int]:
    with open(path) as fh:
        doc = json.load(fh)
    dims = ProblemDims(d=int(doc["d"]), r=int(doc["r"]), k=int(doc["k"]))
    gt = GroundTruth(
        dims=dims,
        big_d=float(doc["D"]),
        nu=float(doc["nu"]),
        w_list=np.asarray(doc["w_list"], dtype=float),
        novel_flags=tuple(bool(f) for f in doc["novel_flags"]),
    )
    return gt, int(doc["seed"])
