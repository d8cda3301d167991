import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from matdyadic.filtration import build_tree, dyadic_tree
from matdyadic.measure import (MatrixMeasure, inner_product, is_psd, psd_pinv, psd_sqrt,
                               random_measure, random_psd, range_projector, scalar_measure)

import oracles


def test_psd_pinv_of_zero_is_zero():
    assert np.array_equal(psd_pinv(np.zeros((3, 3))), np.zeros((3, 3)))


def test_psd_pinv_penrose_conditions(rng):
    A = random_psd(rng, 4, rank=2)
    P = psd_pinv(A)
    assert np.allclose(A @ P @ A, A, atol=1e-12)
    assert np.allclose(P @ A @ P, P, atol=1e-10)
    assert np.allclose(A @ P, (A @ P).T, atol=1e-12)
    assert np.allclose(A @ P, range_projector(A), atol=1e-10)


def test_psd_pinv_rejects_asymmetric():
    with pytest.raises(ValueError):
        psd_pinv(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_psd_sqrt_cuts_roundoff_eigenvalues():
    v = np.array([1.0, 1.0]) / np.sqrt(2)
    A = np.outer(v, v) + 1e-17 * np.eye(2)
    S = psd_sqrt(A)
    assert np.allclose(S, np.outer(v, v), atol=1e-14)


def test_aggregate_is_additive(rng):
    F = build_tree(2, [3, [2, 1, 2]], np.ones(5))
    W = random_measure(1, F, 3, rank_deficient_prob=0.5)
    for Q in F:
        if not F.is_leaf(Q):
            assert np.allclose(W.aggregate(Q), sum(W.aggregate(C) for C in F.children(Q)))
        assert np.allclose(W.aggregate(Q), oracles.mass(W, Q))


def test_rejects_indefinite_mass():
    F = dyadic_tree(1)
    with pytest.raises(ValueError):
        MatrixMeasure(F, np.array([np.eye(2), -np.eye(2)]))
    with pytest.raises(ValueError):
        MatrixMeasure(F, np.ones((3, 2, 2)))


def test_inner_product_matches_loop(rng):
    F = dyadic_tree(2)
    W = random_measure(4, F, 2)
    f, g = rng.standard_normal((4, 2)), rng.standard_normal((4, 2))
    assert inner_product(f, g, W) == pytest.approx(oracles.w_inner(W, f, g))
    assert W.norm(f) == pytest.approx(np.sqrt(inner_product(f, f, W)))


def test_scalar_measure_is_sigma_times_identity():
    F = build_tree(1, 2, [0.25, 0.75])
    W = scalar_measure(F, 3)
    assert np.allclose(W.aggregate(F.root), np.eye(3))


def test_random_measure_is_seeded():
    F = dyadic_tree(3, 3)
    a = random_measure(11, F, 3, 5.0, rank_deficient_prob=0.3, zero_prob=0.1)
    b = random_measure(11, F, 3, 5.0, rank_deficient_prob=0.3, zero_prob=0.1)
    assert np.array_equal(a.leaf_masses, b.leaf_masses)


def test_condition_cap_one_gives_identity_multiples():
    W = random_measure(2, dyadic_tree(2), 3, condition_cap=1.0)
    for A in W.leaf_masses:
        assert np.allclose(A, A[0, 0] * np.eye(3))


def test_condition_cap_is_respected():
    W = random_measure(2, dyadic_tree(3), 3, condition_cap=7.0)
    for A in W.leaf_masses:
        lam = np.linalg.eigvalsh(A)
        assert lam.max() / lam.min() <= 7.0 * (1 + 1e-9)


def test_golden_measure_seed_7():
    # frozen from random_measure(7, dyadic_tree(2, 2), 2); the root value is the leaf sum
    W = random_measure(7, dyadic_tree(2, 2), 2)
    expected_first = np.array([[0.04300137614285211, -0.03698993755842796],
                               [-0.03698993755842796, 0.2615332577608185]])
    expected_root = np.array([[0.5897181873182111, -0.1656437524225284],
                              [-0.1656437524225284, 0.6463257739218263]])
    assert np.allclose(W.leaf_masses[0], expected_first, rtol=0, atol=1e-15)
    assert np.allclose(W.aggregate(W.filtration.root), expected_root, rtol=0, atol=1e-15)
    assert np.allclose(W.leaf_masses.sum(axis=0), expected_root, atol=1e-15)


def test_list_roundtrip():
    F = dyadic_tree(2)
    W = random_measure(3, F, 2, rank_deficient_prob=1.0)
    assert np.array_equal(MatrixMeasure.from_list(F, W.to_list()).leaf_masses, W.leaf_masses)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), d=st.integers(1, 4), rank=st.integers(0, 4))
def test_random_psd_properties(seed, d, rank):
    rank = min(rank, d)
    A = random_psd(np.random.default_rng(seed), d, 20.0, rank=rank if rank else None)
    assert is_psd(A)
    assert np.trace(A) == pytest.approx(d)
    P = psd_pinv(A)
    assert np.allclose(A @ P @ A, A, atol=1e-9)
    S = psd_sqrt(A)
    assert np.allclose(S @ S, A, atol=1e-9)
