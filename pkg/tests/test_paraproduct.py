import numpy as np
import pytest

from matdyadic.analysis import carleson_constant, cube_profile, paraproduct_testing_constant
from matdyadic.filtration import dyadic_tree
from matdyadic.martingale import weighted_delta_matrix, weighted_expectation_matrix
from matdyadic.measure import random_measure
from matdyadic.paraproduct import (build_paraproduct, canonical_form, check_replacement,
                                   paraproduct_norm_bound, t_para_residual, two_path_difference)
from matdyadic.shift import ShiftOperator, ch_grid_sabotage

import oracles


def test_zero_operator_has_zero_paraproduct():
    F = dyadic_tree(3)
    W, V = random_measure(0, F, 2), random_measure(1, F, 2)
    T = ShiftOperator(F, 1)
    Pi = build_paraproduct(T, W, V)
    assert not np.any(Pi.matrix)
    rep = check_replacement(T, W, V, Pi)
    assert rep.passed
    c = paraproduct_norm_bound(Pi, W, V, 0.0)
    assert c.passed and c.slack == 0.0


def test_complexity_at_depth_contributes_nothing(instance):
    # with r = depth - 1 only the root has a Ch^r of non-leaves
    inst = instance(seed=1, d=1, depth=2, r=1, kind="generalized")
    F, W, V = inst.F, inst.W, inst.V
    Pi = build_paraproduct(inst.T, W, V)
    TW = inst.T.weighted_matrix(W)
    only_root = sum(weighted_delta_matrix(V, R) for R in F.generations[1]) @ TW @ \
        weighted_expectation_matrix(W, F.root)
    assert np.allclose(canonical_form(Pi.matrix - only_root, W, V), 0, atol=1e-12)


def test_matches_brute_force_formula(instance):
    inst = instance(seed=3, d=2, depth=3, r=1, kind="haar")
    Pi = build_paraproduct(inst.T, inst.W, inst.V)
    K = oracles.kernel(inst.T)
    rng = np.random.default_rng(0)
    for _ in range(3):
        f = rng.standard_normal((inst.F.n_leaves, 2))
        got = (Pi.matrix @ f.ravel()).reshape(f.shape)
        want = oracles.paraproduct_apply(inst.T, K, inst.W, inst.V, f)
        assert oracles.w_norm(inst.V, got - want) <= 1e-10 * (1 + oracles.w_norm(inst.V, want))


@pytest.mark.parametrize("kind", ["haar", "generalized"])
def test_two_assembly_paths_agree(instance, kind):
    inst = instance(seed=5, d=3, depth=4, branching=2, r=2, kind=kind)
    assert two_path_difference(inst.T, inst.W, inst.V) <= 1e-10


@pytest.mark.parametrize("seed", range(4))
def test_replacement_identities(instance, seed):
    inst = instance(seed=seed, d=2, depth=4, branching=2, r=seed % 3, kind="haar" if seed % 2 else "generalized")
    rep = check_replacement(inst.T, inst.W, inst.V)
    assert rep.passed, rep.to_dict()
    assert rep.pairs_checked > 0
    assert set(rep.clause_residuals) == {1, 2, 3}


def test_clause_three_is_nontrivial(instance):
    # a generalized shift sees constants, so below the band both sides are nonzero
    inst = instance(seed=0, d=1, depth=4, branching=2, r=0, kind="generalized")
    F, W, V = inst.F, inst.W, inst.V
    Pi = build_paraproduct(inst.T, W, V)
    TW = inst.T.weighted_matrix(W)
    DQ = weighted_delta_matrix(W, F.root)
    seen = 0.0
    for R in F.generations[2]:
        lhs = weighted_delta_matrix(V, R) @ Pi.matrix @ DQ
        rhs = weighted_delta_matrix(V, R) @ TW @ DQ
        seen = max(seen, np.abs(canonical_form(rhs, W, V)).max())
        assert np.allclose(canonical_form(lhs - rhs, W, V), 0, atol=1e-12)
    assert seen > 1e-2


def test_sabotage_breaks_invariance():
    F = dyadic_tree(3)
    W, V = random_measure(0, F, 1), random_measure(1, F, 1)
    T = ch_grid_sabotage(F, 0)
    assert t_para_residual(T, W, V)[0] > 1e-6
    with pytest.raises(ValueError):
        build_paraproduct(T, W, V)


def test_output_pieces_are_orthogonal(instance):
    inst = instance(seed=4, d=2, depth=3, r=0)
    F, W, V = inst.F, inst.W, inst.V
    Pi = build_paraproduct(inst.T, W, V)
    f = np.random.default_rng(1).standard_normal(F.n_leaves * 2)
    g = Pi.matrix @ f
    pieces = [weighted_delta_matrix(V, R) @ g for R in F if not F.is_leaf(R)]
    assert np.allclose(V.sqrt_gram @ (sum(pieces) - g), 0, atol=1e-10)
    for i, a in enumerate(pieces):
        for b in pieces[i + 1:]:
            assert abs(a @ V.gram @ b) <= 1e-10 * (1 + g @ V.gram @ g)


def test_norm_bound(instance):
    inst = instance(seed=6, d=2, depth=4, branching=2, r=1)
    for side, T, W, V in (("W", inst.T, inst.W, inst.V), ("V", inst.T.adjoint(), inst.V, inst.W)):
        Pi = build_paraproduct(inst.T, inst.W, inst.V, side)
        T1 = paraproduct_testing_constant(T, W, V, profile=cube_profile(T, W, V))
        c = paraproduct_norm_bound(Pi, inst.W, inst.V, T1)
        assert c.passed
        assert c.rhs == pytest.approx(np.sqrt(carleson_constant(2)) * T1)
        assert c.lhs == pytest.approx(Pi.norm())
