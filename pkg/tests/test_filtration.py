import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from matdyadic.filtration import Filtration, build_tree, dyadic_tree, random_tree


def test_uniform_binary_tree_shape():
    F = dyadic_tree(3)
    assert F.n_leaves == 8
    assert len(F) == 15
    assert [len(g) for g in F.generations] == [1, 2, 4, 8]
    assert F.root.sigma_mass == pytest.approx(1.0)
    assert all(Q.sigma_mass == pytest.approx(0.5 ** Q.rank) for Q in F)


def test_atoms_are_breadth_first_with_children_in_order():
    F = build_tree(2, [2, [1, 3]], [1, 2, 3, 4])
    assert [Q.path for Q in F] == [(), (0,), (1,), (0, 0), (1, 0), (1, 1), (1, 2)]
    assert [Q.id for Q in F] == list(range(7))
    assert F.children(F.root) == [F.atom((0,)), F.atom((1,))]
    assert F.atom((1,)).sigma_mass == 9.0


def test_single_child_atom_differs_from_its_child():
    F = build_tree(2, [1, 2], [1.0, 1.0])
    top, child = F.root, F.atom((0,))
    assert F.leaf_range(top) == F.leaf_range(child)
    assert top != child and top.rank != child.rank


def test_ch_r_and_boundaries():
    F = dyadic_tree(3)
    assert F.ch_r(F.root, 0) == [F.root]
    assert len(F.ch_r(F.root, 2)) == 4
    assert len(F.ch_r(F.leaves[0], 0)) == 1
    with pytest.raises(ValueError):
        F.ch_r(F.leaves[0], 1)
    with pytest.raises(ValueError):
        F.ch_r(F.root, -1)


def test_ancestor():
    F = dyadic_tree(3)
    L = F.atom((1, 0, 1))
    assert F.ancestor(L, 0) == L
    assert F.ancestor(L, 1) == F.atom((1, 0))
    assert F.ancestor(L, 3) == F.root
    with pytest.raises(ValueError):
        F.ancestor(L, 4)


def test_tree_distance_and_lca():
    F = dyadic_tree(3)
    a, b = F.atom((0, 0, 0)), F.atom((0, 1, 1))
    assert F.lca(a, b) == F.atom((0,))
    assert F.tree_distance(a, b) == 4
    assert F.tree_distance(a, a) == 0
    assert F.tree_distance(F.root, a) == 3


def test_contains_is_atom_inclusion():
    F = build_tree(2, [1, 2], [1.0, 2.0])
    top, mid = F.root, F.atom((0,))
    assert F.contains(top, mid)
    assert not F.contains(mid, top)      # same set, higher rank
    assert F.subtree(mid) == [mid] + F.leaves


def test_build_tree_errors():
    with pytest.raises(ValueError):
        build_tree(2, 2, [1, 1, 1])
    with pytest.raises(ValueError):
        build_tree(1, 2, [1, -1])
    with pytest.raises(ValueError):
        build_tree(2, [2, [1, 0]], [1])
    with pytest.raises(ValueError):
        build_tree(2, [2], [1, 1, 1, 1])


def test_zero_mass_leaves_allowed():
    F = build_tree(1, 3, [0.0, 1.0, 0.0])
    assert F.root.sigma_mass == 1.0
    assert F.leaves[0].sigma_mass == 0.0


def test_json_roundtrip():
    rng = np.random.default_rng(3)
    F = random_tree(rng, 3, 3, irregular=True, zero_leaf=True)
    data = json.loads(F.to_json())
    assert set(data) == {"depth", "branching", "leaf_masses"}
    G = Filtration.from_json(F.to_json())
    assert [Q.path for Q in G] == [Q.path for Q in F]
    assert np.array_equal(G.leaf_masses, F.leaf_masses)


def test_random_tree_is_seeded():
    a = random_tree(np.random.default_rng(5), 3, 2, irregular=True)
    b = random_tree(np.random.default_rng(5), 3, 2, irregular=True)
    assert a.to_json() == b.to_json()


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), depth=st.integers(0, 4), branching=st.integers(1, 3),
       irregular=st.booleans())
def test_generations_partition_the_leaves(seed, depth, branching, irregular):
    F = random_tree(np.random.default_rng(seed), depth, branching, irregular=irregular)
    for gen in F.generations:
        covered = sorted(i for Q in gen for i in range(*F.leaf_range(Q)))
        assert covered == list(range(F.n_leaves))
        assert sum(Q.sigma_mass for Q in gen) == pytest.approx(F.root.sigma_mass)
    for Q in F:
        if not F.is_leaf(Q):
            assert sum(C.sigma_mass for C in F.children(Q)) == pytest.approx(Q.sigma_mass)
            for C in F.children(Q):
                assert F.parent(C) == Q and F.contains(Q, C)
