import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from matdyadic.filtration import build_tree, dyadic_tree, random_tree
from matdyadic.martingale import (ProjectionSpec, average, decompose, delta, delta_matrix,
                                  expectation, expectation_matrix, load_dense, save_dense,
                                  weighted_adjoint, weighted_average, weighted_delta,
                                  weighted_delta_matrix, weighted_expectation,
                                  weighted_expectation_matrix, weighted_op_norm)
from matdyadic.measure import MatrixMeasure, random_measure, scalar_measure

import oracles


def test_unweighted_average_by_hand():
    F = build_tree(1, 2, [1.0, 3.0])
    f = np.array([[2.0], [6.0]])
    assert average(F, f, F.root) == pytest.approx([5.0])
    assert np.allclose(expectation(F, f, F.root), [[5.0], [5.0]])
    assert np.allclose(delta(F, f, F.root), [[-3.0], [1.0]])


def test_zero_mass_atom_averages_to_zero():
    F = build_tree(1, 2, [0.0, 1.0])
    f = np.array([[4.0], [1.0]])
    assert np.allclose(expectation(F, f, F.leaves[0]), 0.0)


def test_leaf_has_no_delta():
    F = dyadic_tree(2)
    L = F.leaves[1]
    assert not np.any(delta_matrix(F, L, 2))
    W = random_measure(0, F, 2)
    assert not np.any(weighted_delta_matrix(W, L))


def test_weighted_average_by_hand():
    F = build_tree(1, 2, [1.0, 1.0])
    W = MatrixMeasure(F, np.array([np.diag([1.0, 0.0]), np.diag([1.0, 2.0])]))
    f = np.array([[1.0, 5.0], [3.0, 1.0]])
    # W(root) = diag(2, 2), integral = (1 + 3, 0 + 2)
    assert np.allclose(weighted_average(W, f, F.root), [2.0, 1.0])
    # leaf 0 has mass diag(1, 0): the pseudoinverse drops the null component
    assert np.allclose(weighted_average(W, f, F.leaves[0]), [1.0, 0.0])


def test_scalar_weight_reduces_to_unweighted():
    F = build_tree(2, [3, [2, 1, 2]], [0.5, 1.0, 2.0, 0.25, 0.75])
    W = scalar_measure(F, 2)
    for Q in F:
        assert np.allclose(weighted_expectation_matrix(W, Q), expectation_matrix(F, Q, 2))
        assert np.allclose(weighted_delta_matrix(W, Q), delta_matrix(F, Q, 2))


def test_matrices_match_function_forms_and_oracle(rng):
    F = random_tree(rng, 3, 3, irregular=True, zero_leaf=True)
    W = random_measure(5, F, 2, rank_deficient_prob=0.5, zero_prob=0.2)
    f = rng.standard_normal((F.n_leaves, 2))
    for Q in F:
        E = weighted_expectation_matrix(W, Q)
        D = weighted_delta_matrix(W, Q)
        assert np.allclose((E @ f.ravel()).reshape(f.shape), weighted_expectation(W, f, Q))
        assert np.allclose((D @ f.ravel()).reshape(f.shape), weighted_delta(W, f, Q))
        assert np.allclose(weighted_expectation(W, f, Q), oracles.w_expect(W, f, Q))
        assert np.allclose(weighted_delta(W, f, Q), oracles.w_delta(W, f, Q))


def test_projection_spec():
    F = dyadic_tree(2)
    W = random_measure(1, F, 2)
    Q = F.atom((1,))
    f = np.arange(8.0).reshape(4, 2)
    for kind, ref in (("E", expectation_matrix(F, Q, 2)), ("D", delta_matrix(F, Q, 2)),
                      ("EW", weighted_expectation_matrix(W, Q)), ("DW", weighted_delta_matrix(W, Q))):
        spec = ProjectionSpec(Q, kind, F, W if kind.endswith("W") else None, d=2)
        assert np.allclose(spec.matrix(), ref)
        assert np.allclose(spec.apply(f).ravel(), ref @ f.ravel())
    with pytest.raises(ValueError):
        ProjectionSpec(Q, "DW", F)
    with pytest.raises(ValueError):
        ProjectionSpec(Q, "X", F)


def test_weighted_projection_is_orthogonal():
    F = dyadic_tree(3)
    W = random_measure(2, F, 3, rank_deficient_prob=0.4)
    for Q in F:
        for M in (weighted_expectation_matrix(W, Q), weighted_delta_matrix(W, Q)):
            # self-adjoint and idempotent in L^2(W)
            assert np.allclose(W.gram @ M, (W.gram @ M).T, atol=1e-12)
            assert np.allclose(W.sqrt_gram @ (M @ M - M), 0, atol=1e-12)
            assert weighted_op_norm(M, W, W) <= 1 + 1e-9


def test_expectation_times_delta_vanishes():
    F = dyadic_tree(2, 3)
    W = random_measure(3, F, 2)
    for Q in F:
        E, D = weighted_expectation_matrix(W, Q), weighted_delta_matrix(W, Q)
        assert np.allclose(W.sqrt_gram @ E @ D, 0, atol=1e-12)
        assert np.allclose(W.sqrt_gram @ D @ E, 0, atol=1e-12)


def test_decompose_requires_support():
    F = dyadic_tree(2)
    W = random_measure(0, F, 1)
    f = np.ones((4, 1))
    with pytest.raises(ValueError):
        decompose(W, f, F.atom((0,)))


def test_weighted_adjoint():
    F = dyadic_tree(2)
    W, V = random_measure(0, F, 2), random_measure(1, F, 2)
    rng = np.random.default_rng(0)
    M = rng.standard_normal((8, 8))
    A = weighted_adjoint(M, W, V)
    f, g = rng.standard_normal(8), rng.standard_normal(8)
    assert (M @ f) @ V.gram @ g == pytest.approx(f @ W.gram @ (A @ g))


def test_dense_dump_roundtrip(tmp_path):
    M = np.arange(12.0).reshape(3, 4)
    save_dense(tmp_path / "m.npy", M)
    assert np.array_equal(load_dense(tmp_path / "m.npy"), M)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), d=st.integers(1, 3), depth=st.integers(1, 3))
def test_decomposition_is_orthogonal_and_complete(seed, d, depth):
    rng = np.random.default_rng(seed)
    F = random_tree(rng, depth, 3, irregular=True, zero_leaf=bool(seed % 3 == 0))
    W = random_measure(seed, F, d, rank_deficient_prob=0.3, zero_prob=0.1)
    f = rng.standard_normal((F.n_leaves, d))
    parts = decompose(W, f)
    total = sum(p for _, p in parts)
    scale = max(1.0, W.norm(f))
    assert W.norm(total - f) <= 1e-9 * scale
    assert sum(W.norm(p) ** 2 for _, p in parts) == pytest.approx(W.norm(f) ** 2, rel=1e-9, abs=1e-12)
