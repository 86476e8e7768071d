import numpy as np
import pytest

from dpgrad.linalg import (
    COLUMNS_COMPLEMENT,
    COLUMNS_ONTO,
    ROWS_COMPLEMENT,
    ROWS_ONTO,
    Subspace,
    add_vector,
    nonzero_singular_bounds,
    orthonormal_basis,
    project,
)

SIDES = (COLUMNS_ONTO, COLUMNS_COMPLEMENT, ROWS_ONTO, ROWS_COMPLEMENT)


def check_subspace_invariants(s):
    b = s.basis
    assert b.shape[0] == s.ambient_dim
    assert b.shape[1] <= s.ambient_dim
    norms = np.linalg.norm(b, axis=0)
    assert np.all(np.abs(norms - 1.0) <= 1e-10)
    gram = b.T @ b
    off = gram - np.diag(np.diag(gram))
    assert np.max(np.abs(off), initial=0.0) <= 1e-10


def test_empty_span():
    s = orthonormal_basis([], ambient_dim=3)
    assert s.dim == 0
    assert s.ambient_dim == 3


def test_already_orthonormal_inputs_unchanged():
    e1 = np.array([1.0, 0.0, 0.0])
    e2 = np.array([0.0, 1.0, 0.0])
    s = orthonormal_basis([e1, e2])
    assert s.dim == 2
    np.testing.assert_allclose(s.basis, np.column_stack([e1, e2]), atol=1e-12)


def test_basis_spans_inputs_vs_qr_oracle():
    vecs = [np.array([1.0, 1.0, 0.0]), np.array([1.0, 0.0, 0.0])]
    s = orthonormal_basis(vecs, tol=1e-10)
    assert s.dim == 2
    # independent oracle: QR of the stacked input matrix
    q, _ = np.linalg.qr(np.column_stack(vecs))
    for v in vecs:
        mine = project(s, v, COLUMNS_ONTO)
        oracle = q @ (q.T @ v)
        np.testing.assert_allclose(mine, v, atol=1e-12)
        np.testing.assert_allclose(mine, oracle, atol=1e-12)


def test_dependent_vectors_dropped():
    v = np.array([1.0, 2.0, -1.0])
    s = orthonormal_basis([v, 2 * v, v + 1e-13 * np.array([0.0, 0.0, 1.0])])
    assert s.dim == 1


def test_mixed_dimensions_rejected():
    with pytest.raises(ValueError, match="mixed dimensions"):
        orthonormal_basis([np.ones(3), np.ones(4)])


def test_randomized_basis_invariants():
    rng = np.random.default_rng(42)
    for _ in range(50):
        d = int(rng.integers(2, 9))
        n = int(rng.integers(1, 7))
        vecs = [rng.standard_normal(d) for _ in range(n)]
        if rng.random() < 0.5:
            vecs.append(vecs[0].copy())              # duplicate
        if rng.random() < 0.5 and len(vecs) >= 2:
            vecs.append(vecs[0] + 1e-12 * vecs[1])   # near-dependent
        s = orthonormal_basis(vecs)
        check_subspace_invariants(s)
        for v in vecs:
            np.testing.assert_allclose(project(s, v, COLUMNS_ONTO), v, atol=1e-8)


def test_add_vector_noop_below_tol():
    s = orthonormal_basis([np.array([1.0, 0.0])])
    assert add_vector(s, np.array([2.0, 0.0])).dim == 1


def test_project_empty_complement_is_identity(rng):
    s = Subspace.empty(4)
    m = rng.standard_normal((4, 3))
    np.testing.assert_array_equal(project(s, m, COLUMNS_COMPLEMENT), m)
    np.testing.assert_array_equal(project(s, m.T, ROWS_COMPLEMENT), m.T)


def test_project_vector_examples():
    s = orthonormal_basis([np.array([1.0, 0.0])])
    v = np.array([1.0, 1.0])
    np.testing.assert_allclose(project(s, v, COLUMNS_ONTO), [1.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(project(s, v, COLUMNS_COMPLEMENT), [0.0, 1.0], atol=1e-12)


def test_projection_idempotence_and_decomposition(rng):
    for _ in range(20):
        d = int(rng.integers(2, 8))
        k = int(rng.integers(1, d + 1))
        s = orthonormal_basis([rng.standard_normal(d) for _ in range(k)])
        m = rng.standard_normal((d, int(rng.integers(1, 6))))
        for side in (COLUMNS_ONTO, COLUMNS_COMPLEMENT):
            once = project(s, m, side)
            twice = project(s, once, side)
            assert np.max(np.abs(twice - once)) <= 1e-12
        onto = project(s, m, COLUMNS_ONTO)
        comp = project(s, m, COLUMNS_COMPLEMENT)
        assert np.max(np.abs(onto + comp - m)) <= 1e-12

        mr = rng.standard_normal((int(rng.integers(1, 6)), d))
        for side in (ROWS_ONTO, ROWS_COMPLEMENT):
            once = project(s, mr, side)
            twice = project(s, once, side)
            assert np.max(np.abs(twice - once)) <= 1e-12
        assert np.max(np.abs(project(s, mr, ROWS_ONTO) + project(s, mr, ROWS_COMPLEMENT) - mr)) <= 1e-12


def test_projection_orthogonality(rng):
    for _ in range(30):
        d = int(rng.integers(2, 10))
        s = orthonormal_basis([rng.standard_normal(d) for _ in range(int(rng.integers(1, d)))])
        v = rng.standard_normal(d)
        onto = project(s, v, COLUMNS_ONTO)
        comp = project(s, v, COLUMNS_COMPLEMENT)
        assert abs(onto @ comp) <= 1e-10 * (v @ v)


def test_project_dimension_mismatch():
    s = Subspace.empty(3)
    with pytest.raises(ValueError, match="dimension mismatch"):
        project(s, np.ones((4, 2)), COLUMNS_ONTO)
    with pytest.raises(ValueError, match="dimension mismatch"):
        project(s, np.ones((2, 4)), ROWS_ONTO)
    with pytest.raises(ValueError, match="side"):
        project(s, np.ones(3), "sideways")


def test_singular_bounds_identity():
    assert nonzero_singular_bounds(np.eye(3)) == (1.0, 1.0)


def test_singular_bounds_drops_zero():
    m = np.diag([2.0, 0.5, 0.0])
    lo, hi = nonzero_singular_bounds(m, rank_tol=1e-8)
    assert (lo, hi) == (0.5, 2.0)


def test_singular_bounds_zero_matrix_errors():
    with pytest.raises(ValueError, match="no nonzero singular values"):
        nonzero_singular_bounds(np.zeros((3, 2)))
