"""Finite atomic filtrations represented as rooted trees of atoms.

Atoms are identified by their path from the root (equivalently by their
rank and position), never by their leaf sets: an atom with a single child
and that child are different atoms even though they coincide as sets.
All leaves sit at rank ``depth``; functions on the filtration are tables
of values on those leaves.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, Sequence, Union

import numpy as np

Branching = Union[int, Sequence[Union[int, Sequence[int]]]]


@dataclass(frozen=True)
class Atom:
    id: int
    rank: int
    path: tuple[int, ...]
    sigma_mass: float

    def __repr__(self) -> str:
        return f"Atom(rank={self.rank}, path={self.path}, mass={self.sigma_mass:.4g})"


@dataclass(eq=False)
class Filtration:
    """Immutable tree of atoms, stored breadth first with children in index order."""

    depth: int
    atoms: list[Atom]
    parent_ids: list[int]
    children_ids: list[tuple[int, ...]]
    leaf_lo: np.ndarray
    leaf_hi: np.ndarray
    generations: list[list[Atom]]
    leaf_masses: np.ndarray
    branching_spec: object = None
    _path_index: dict = field(default_factory=dict, repr=False)
    _ch_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._path_index = {a.path: a for a in self.atoms}
        self.leaf_lo.setflags(write=False)
        self.leaf_hi.setflags(write=False)
        self.leaf_masses.setflags(write=False)

    # -- basic navigation -------------------------------------------------
    @property
    def root(self) -> Atom:
        return self.atoms[0]

    @property
    def n_leaves(self) -> int:
        return len(self.generations[self.depth])

    @property
    def leaves(self) -> list[Atom]:
        return self.generations[self.depth]

    def atom(self, path: Sequence[int]) -> Atom:
        return self._path_index[tuple(path)]

    def is_leaf(self, Q: Atom) -> bool:
        return Q.rank == self.depth

    def parent(self, Q: Atom) -> Atom | None:
        p = self.parent_ids[Q.id]
        return None if p < 0 else self.atoms[p]

    def children(self, Q: Atom) -> list[Atom]:
        return [self.atoms[i] for i in self.children_ids[Q.id]]

    def leaf_range(self, Q: Atom) -> tuple[int, int]:
        """Half-open range of leaf indices contained in ``Q``."""
        return int(self.leaf_lo[Q.id]), int(self.leaf_hi[Q.id])

    def leaf_slice(self, Q: Atom, d: int = 1) -> slice:
        lo, hi = self.leaf_range(Q)
        return slice(lo * d, hi * d)

    def ch_r(self, Q: Atom, r: int) -> list[Atom]:
        """Descendants of ``Q`` exactly ``r`` generations below it."""
        if r < 0:
            raise ValueError("r must be non-negative")
        if Q.rank + r > self.depth:
            raise ValueError(f"Ch^{r} of an atom of rank {Q.rank} exceeds depth {self.depth}")
        key = (Q.id, r)
        if key not in self._ch_cache:
            lo, hi = self.leaf_range(Q)
            self._ch_cache[key] = [R for R in self.generations[Q.rank + r]
                                   if self.leaf_lo[R.id] >= lo and self.leaf_hi[R.id] <= hi]
        return list(self._ch_cache[key])

    def ancestor(self, Q: Atom, k: int) -> Atom:
        """The unique atom of rank ``rk Q - k`` containing ``Q``."""
        if k < 0:
            raise ValueError("k must be non-negative")
        if k > Q.rank:
            raise ValueError(f"atom of rank {Q.rank} has no ancestor of order {k}")
        return self._path_index[Q.path[:len(Q.path) - k]]

    def contains(self, Q: Atom, R: Atom) -> bool:
        """Atom inclusion ``R ⊂ Q``: set inclusion together with ``rk R >= rk Q``."""
        return R.rank >= Q.rank and R.path[:Q.rank] == Q.path

    def subtree(self, Q: Atom) -> list[Atom]:
        """All atoms ``R ⊂ Q`` (including ``Q``), breadth first."""
        return [R for n in range(Q.rank, self.depth + 1) for R in self.ch_r(Q, n - Q.rank)]

    def lca(self, Q: Atom, R: Atom) -> Atom:
        k = 0
        for a, b in zip(Q.path, R.path):
            if a != b:
                break
            k += 1
        return self._path_index[Q.path[:k]]

    def tree_distance(self, Q: Atom, R: Atom) -> int:
        S = self.lca(Q, R)
        return (Q.rank - S.rank) + (R.rank - S.rank)

    def __iter__(self) -> Iterator[Atom]:
        return iter(self.atoms)

    def __len__(self) -> int:
        return len(self.atoms)

    def leaf_indicator(self, Q: Atom) -> np.ndarray:
        ind = np.zeros(self.n_leaves)
        lo, hi = self.leaf_range(Q)
        ind[lo:hi] = 1.0
        return ind

    # -- serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "depth": self.depth,
            "branching": self.branching_spec,
            "leaf_masses": [float(x) for x in self.leaf_masses],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "Filtration":
        return build_tree(data["depth"], data["branching"], data["leaf_masses"])

    @classmethod
    def from_json(cls, text: str) -> "Filtration":
        return cls.from_dict(json.loads(text))


def _child_counts(depth: int, branching: Branching, gen_sizes: list[int], g: int) -> list[int]:
    if isinstance(branching, (int, np.integer)):
        return [int(branching)] * gen_sizes[g]
    if len(branching) != depth:
        raise ValueError(f"branching needs one entry per generation ({depth}), got {len(branching)}")
    spec = branching[g]
    if isinstance(spec, (int, np.integer)):
        return [int(spec)] * gen_sizes[g]
    counts = [int(c) for c in spec]
    if len(counts) != gen_sizes[g]:
        raise ValueError(f"generation {g} has {gen_sizes[g]} atoms but {len(counts)} child counts")
    return counts


def build_tree(depth: int, branching: Branching, leaf_masses: Sequence[float]) -> Filtration:
    """Build a filtration of the given depth with root rank 0.

    ``branching`` is either a uniform child count, or one entry per
    generation ``0..depth-1``; an entry is a count shared by every atom of
    that generation or a list of per-atom counts in breadth-first order.
    Child counts must be at least 1.
    """
    if depth < 0:
        raise ValueError("depth must be non-negative")
    gen_sizes = [1]
    counts_per_gen = []
    for g in range(depth):
        counts = _child_counts(depth, branching, gen_sizes, g)
        if any(c < 1 for c in counts):
            raise ValueError("every atom needs at least one child")
        counts_per_gen.append(counts)
        gen_sizes.append(sum(counts))

    masses = np.asarray(leaf_masses, dtype=float)
    if masses.ndim != 1 or masses.size != gen_sizes[depth]:
        raise ValueError(f"expected {gen_sizes[depth]} leaf masses, got {masses.size}")
    if np.any(masses < 0) or not np.all(np.isfinite(masses)):
        raise ValueError("leaf masses must be finite and non-negative")

    # paths generation by generation
    paths: list[list[tuple[int, ...]]] = [[()]]
    parents_per_gen: list[list[int]] = [[-1]]
    for g in range(depth):
        nxt, par = [], []
        for i, (p, c) in enumerate(zip(paths[g], counts_per_gen[g])):
            for j in range(c):
                nxt.append(p + (j,))
                par.append(i)
        paths.append(nxt)
        parents_per_gen.append(par)

    # leaf ranges bottom-up
    lo_gen = [None] * (depth + 1)
    hi_gen = [None] * (depth + 1)
    lo_gen[depth] = np.arange(gen_sizes[depth])
    hi_gen[depth] = lo_gen[depth] + 1
    mass_gen = [None] * (depth + 1)
    mass_gen[depth] = masses.copy()
    for g in range(depth - 1, -1, -1):
        lo = np.full(gen_sizes[g], np.iinfo(np.int64).max)
        hi = np.zeros(gen_sizes[g], dtype=np.int64)
        m = np.zeros(gen_sizes[g])
        for j, p in enumerate(parents_per_gen[g + 1]):
            lo[p] = min(lo[p], lo_gen[g + 1][j])
            hi[p] = max(hi[p], hi_gen[g + 1][j])
            m[p] += mass_gen[g + 1][j]
        lo_gen[g], hi_gen[g], mass_gen[g] = lo, hi, m

    atoms, parent_ids, generations = [], [], []
    offsets = np.cumsum([0] + gen_sizes)
    for g in range(depth + 1):
        gen = []
        for i, p in enumerate(paths[g]):
            a = Atom(id=len(atoms), rank=g, path=p, sigma_mass=float(mass_gen[g][i]))
            atoms.append(a)
            gen.append(a)
            parent_ids.append(-1 if g == 0 else int(offsets[g - 1] + parents_per_gen[g][i]))
        generations.append(gen)
    children: list[list[int]] = [[] for _ in atoms]
    for a in atoms[1:]:
        children[parent_ids[a.id]].append(a.id)

    spec = branching if isinstance(branching, (int, np.integer)) else [
        b if isinstance(b, (int, np.integer)) else list(b) for b in branching]
    if isinstance(spec, np.integer):
        spec = int(spec)
    return Filtration(
        depth=depth,
        atoms=atoms,
        parent_ids=parent_ids,
        children_ids=[tuple(c) for c in children],
        leaf_lo=np.concatenate(lo_gen).astype(np.int64),
        leaf_hi=np.concatenate(hi_gen).astype(np.int64),
        generations=generations,
        leaf_masses=masses,
        branching_spec=spec,
    )


def dyadic_tree(depth: int, branching: int = 2, total_mass: float = 1.0) -> Filtration:
    """Uniform tree with equal leaf masses, the finite analogue of Lebesgue measure on (0, 1]."""
    n = branching ** depth
    return build_tree(depth, branching, [total_mass / n] * n)


def random_tree(rng: np.random.Generator, depth: int, branching: int, *,
                irregular: bool = False, zero_leaf: bool = False) -> Filtration:
    """Random tree with leaf masses in [0.25, 1).

    ``irregular`` draws every child count uniformly from ``1..branching``;
    ``zero_leaf`` sets one randomly chosen leaf mass to zero.
    """
    if irregular:
        spec: list = []
        size = 1
        for _ in range(depth):
            counts = [int(c) for c in rng.integers(1, branching + 1, size=size)]
            spec.append(counts)
            size = sum(counts)
        n = size
    else:
        spec = branching
        n = branching ** depth
    masses = rng.uniform(0.25, 1.0, size=n)
    if zero_leaf and n > 1:
        masses[rng.integers(n)] = 0.0
    return build_tree(depth, spec, masses)
