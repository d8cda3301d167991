"""Haar shifts as sums of per-atom kernel blocks.

A block ``T_Q`` is a scalar kernel supported on ``Q x Q`` and constant on
``R x S`` for ``R, S`` in ``Ch^g(Q)``, where ``g = min(r + 1, depth - rk Q)``
(the finest level available above the leaves). It acts on vector
functions componentwise, ``K(x, y) ⊗ I_d``. With a matrix measure ``W``
the weighted operator is ``T_W f(x) = sum_y K(x, y) W(y) f(y)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np

from .filtration import Atom, Filtration
from .martingale import (delta_block, expectation_block, mean_zero_projection,
                         weighted_delta_block, weighted_op_norm)
from .measure import MatrixMeasure

ZERO_BLOCK_RTOL = 1e-13


def grid_level(F: Filtration, Q: Atom, r: int) -> int:
    return min(r + 1, F.depth - Q.rank)


def _membership(F: Filtration, Q: Atom, atoms: list[Atom]) -> np.ndarray:
    """Leaves of ``Q`` by ``atoms`` incidence matrix (``atoms`` partition ``Q``)."""
    lo, hi = F.leaf_range(Q)
    P = np.zeros((hi - lo, len(atoms)))
    for j, R in enumerate(atoms):
        a, b = F.leaf_range(R)
        P[a - lo:b - lo, j] = 1.0
    return P


@dataclass
class KernelBlock:
    """Kernel of ``T_Q`` as a table over ``Ch^level(Q) x Ch^level(Q)``."""

    atom: Atom
    level: int
    grid: np.ndarray

    @property
    def sup(self) -> float:
        return float(np.abs(self.grid).max(initial=0.0))

    def leaf_kernel(self, F: Filtration) -> np.ndarray:
        """The kernel on ``Q``'s leaves (square, local indexing)."""
        P = _membership(F, self.atom, F.ch_r(self.atom, self.level))
        return P @ self.grid @ P.T


@dataclass(eq=False)
class ShiftOperator:
    """A finite sum of kernel blocks ``T = sum_Q T_Q`` of complexity ``r``.

    ``is_big_haar`` records that every block satisfies
    ``sup |K_Q| <= |Q|^{-1}``; ``annihilates_constants`` that
    ``T_Q 1_Q = T_Q^* 1_Q = 0``. Both are claims made by the constructor;
    :func:`normalization_excess` checks the first.
    """

    filtration: Filtration
    r: int
    blocks: dict = field(default_factory=dict)
    is_big_haar: bool = False
    annihilates_constants: bool = False
    m: int | None = None
    n: int | None = None
    kind: str = "custom"

    def __post_init__(self):
        if self.r < 0:
            raise ValueError("complexity must be non-negative")

    def __iter__(self):
        return iter(self.blocks[k] for k in sorted(self.blocks))

    # -- dense forms ------------------------------------------------------
    def kernel_matrix(self) -> np.ndarray:
        """Scalar kernel ``K(x, y)`` on leaves, summed over blocks in atom order."""
        F = self.filtration
        K = np.zeros((F.n_leaves, F.n_leaves))
        for B in self:
            s = F.leaf_slice(B.atom)
            K[s, s] += B.leaf_kernel(F)
        return K

    def unweighted_matrix(self, d: int = 1) -> np.ndarray:
        """The operator on ``L^2(sigma)`` (or its ``d``-fold copy)."""
        M = self.kernel_matrix() * self.filtration.leaf_masses[None, :]
        return np.kron(M, np.eye(d)) if d > 1 else M

    def weighted_matrix(self, W: MatrixMeasure) -> np.ndarray:
        """Leaf-basis matrix of ``f -> T(W f)``."""
        return weighted_kernel_matrix(self.kernel_matrix(), W)

    def apply_weighted(self, W: MatrixMeasure, f: np.ndarray) -> np.ndarray:
        f = W._as_function(f)
        Wf = np.einsum("lab,lb->la", W.leaf_masses, f)
        return self.kernel_matrix() @ Wf

    def adjoint(self) -> "ShiftOperator":
        """The transposed-kernel shift; weighted by ``V`` it is ``T^*_V``."""
        blocks = {k: replace(B, grid=B.grid.T.copy()) for k, B in self.blocks.items()}
        return ShiftOperator(self.filtration, self.r, blocks, self.is_big_haar,
                             self.annihilates_constants, m=self.n, n=self.m, kind=self.kind)

    def adjoint_weighted(self, V: MatrixMeasure) -> np.ndarray:
        return self.adjoint().weighted_matrix(V)

    def block_operator(self, Q: Atom) -> "ShiftOperator":
        blocks = {Q.id: self.blocks[Q.id]} if Q.id in self.blocks else {}
        return replace(self, blocks=blocks)

    def truncate_blocks(self, Q: Atom) -> "ShiftOperator":
        """``T^Q``: keep only the blocks ``T_R`` with ``R ⊂ Q``."""
        F = self.filtration
        blocks = {k: B for k, B in self.blocks.items() if F.contains(Q, B.atom)}
        return replace(self, blocks=blocks)

    def split_by_rank(self) -> list["ShiftOperator"]:
        """``T_k = sum over rk Q ≡ k (mod r+1)`` for ``k = 0..r``."""
        parts = []
        for k in range(self.r + 1):
            blocks = {i: B for i, B in self.blocks.items() if B.atom.rank % (self.r + 1) == k}
            parts.append(replace(self, blocks=blocks))
        return parts

    def normalization_excess(self) -> float:
        """``max_Q |Q| * sup|K_Q|``; at most 1 for a big Haar shift."""
        worst = 0.0
        for B in self:
            if B.sup == 0:
                continue
            worst = max(worst, np.inf if B.atom.sigma_mass == 0 else B.atom.sigma_mass * B.sup)
        return float(worst)

    # -- serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "r": self.r,
            "m": self.m,
            "n": self.n,
            "kind": self.kind,
            "flags": {"is_big_haar": self.is_big_haar,
                      "annihilates_constants": self.annihilates_constants},
            "blocks": [{"atom_path": list(B.atom.path), "level": B.level,
                        "grid": [[float(x) for x in row] for row in B.grid]} for B in self],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, F: Filtration, data: dict) -> "ShiftOperator":
        blocks = {}
        for b in data["blocks"]:
            Q = F.atom(b["atom_path"])
            level = b.get("level", grid_level(F, Q, data["r"]))
            grid = np.asarray(b["grid"], dtype=float).reshape(len(F.ch_r(Q, level)), -1)
            blocks[Q.id] = KernelBlock(Q, level, grid)
        flags = data.get("flags", {})
        return cls(F, int(data["r"]), blocks, bool(flags.get("is_big_haar", False)),
                   bool(flags.get("annihilates_constants", False)),
                   m=data.get("m"), n=data.get("n"), kind=data.get("kind", "custom"))


def weighted_kernel_matrix(K: np.ndarray, W: MatrixMeasure) -> np.ndarray:
    """``[K(x, y) W(y)]`` as an ``(N d) x (N d)`` matrix."""
    N, d = W.n_leaves, W.dim
    return np.einsum("xy,yab->xayb", K, W.leaf_masses).reshape(N * d, N * d)


def apply_weighted(T: ShiftOperator, W: MatrixMeasure, f: np.ndarray) -> np.ndarray:
    return T.apply_weighted(W, f)


def adjoint_weighted(T: ShiftOperator, V: MatrixMeasure) -> np.ndarray:
    return T.adjoint_weighted(V)


def truncate_blocks(T: ShiftOperator, W: MatrixMeasure, Q: Atom) -> np.ndarray:
    """Dense ``(T^Q)_W``."""
    return T.truncate_blocks(Q).weighted_matrix(W)


def truncate_projection(T: ShiftOperator, W: MatrixMeasure, V: MatrixMeasure, Q: Atom) -> np.ndarray:
    """Dense ``T^Q_W = P^V_Q T_W``, with ``P^V_Q = 1_Q - E^V_Q``."""
    return mean_zero_projection(V, Q) @ T.weighted_matrix(W)


def split_by_rank(T: ShiftOperator) -> list[ShiftOperator]:
    return T.split_by_rank()


# -- kernels from block operators ---------------------------------------------

def canonical_kernel(F: Filtration, B: np.ndarray, Q: Atom, columns: list[Atom] | None = None) -> np.ndarray:
    """Kernel of a scalar operator ``B`` on ``L^2(sigma)`` whose input lives on ``Q``.

    ``K(x, y) = (B 1_{Q_y})(x) / |Q_y|`` with ``Q_y`` the atom of ``columns``
    containing ``y`` (the children of ``Q`` by default; a leaf is its own
    child). Zero-mass ``Q_y`` give a zero column. ``B`` is a full
    ``n_leaves x n_leaves`` matrix.
    """
    if columns is None:
        columns = [Q] if F.is_leaf(Q) else F.children(Q)
    K = np.zeros((F.n_leaves, F.n_leaves))
    for S in columns:
        if S.sigma_mass == 0:
            continue
        col = B @ F.leaf_indicator(S) / S.sigma_mass
        lo, hi = F.leaf_range(S)
        K[:, lo:hi] = col[:, None]
    return K


def kernel_to_grid(F: Filtration, K_local: np.ndarray, Q: Atom, level: int, *, atol: float = 1e-9) -> np.ndarray:
    """Compress a local leaf kernel on ``Q`` to its ``Ch^level`` grid, checking constancy."""
    atoms = F.ch_r(Q, level)
    lo = F.leaf_range(Q)[0]
    firsts = [F.leaf_range(R)[0] - lo for R in atoms]
    grid = K_local[np.ix_(firsts, firsts)]
    P = _membership(F, Q, atoms)
    scale = max(1.0, float(np.abs(K_local).max(initial=0.0)))
    if not np.allclose(P @ grid @ P.T, K_local, rtol=0.0, atol=atol * scale):
        raise ValueError(f"kernel is not constant on the Ch^{level} grid of {Q}")
    return grid


# -- constructors -------------------------------------------------------------

Coefficients = Callable[[np.random.Generator, tuple], np.ndarray]


def uniform_coefficients(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=shape)


def _local(F: Filtration, Q: Atom, R: Atom) -> slice:
    lo = F.leaf_range(Q)[0]
    a, b = F.leaf_range(R)
    return slice(a - lo, b - lo)


def _projection_block(F: Filtration, R: Atom, j: int) -> np.ndarray:
    return delta_block(F, R) if j == 1 else expectation_block(F, R)


def _random_piece(rng, F: Filtration, Q: Atom, R: Atom, S: Atom, j: int, k: int,
                  grid_atoms: list[Atom], coefficients: Coefficients) -> np.ndarray:
    """Local ``P^j_R T P^k_S`` on ``Q``'s leaves as a scalar operator matrix."""
    lo, hi = F.leaf_range(Q)
    rows = [A for A in grid_atoms if F.contains(R, A)]
    cols = [A for A in grid_atoms if F.contains(S, A)]
    c = coefficients(rng, (len(rows), len(cols)))
    k0 = _membership(F, R, rows) @ c @ _membership(F, S, cols).T
    sR, sS = _local(F, Q, R), _local(F, Q, S)
    T0 = k0 * F.leaf_masses[F.leaf_range(S)[0]:F.leaf_range(S)[1]][None, :]
    piece = np.zeros((hi - lo, hi - lo))
    piece[sR, sS] = _projection_block(F, R, j) @ T0 @ _projection_block(F, S, k)
    return piece


def _block_from_operator(F: Filtration, Q: Atom, B_local: np.ndarray, level: int) -> np.ndarray:
    """Grid kernel of a local block operator via the canonical kernel on ``Ch^level``."""
    lo, hi = F.leaf_range(Q)
    B = np.zeros((F.n_leaves, F.n_leaves))
    B[lo:hi, lo:hi] = B_local
    K = canonical_kernel(F, B, Q, F.ch_r(Q, level))
    return kernel_to_grid(F, K[lo:hi, lo:hi], Q, level)


def _rescale(grid: np.ndarray, Q: Atom, target: float, *, only_if_larger: bool = False) -> np.ndarray:
    """Scale so that ``sup|grid| = target / |Q|``; zero blocks and zero-mass atoms give 0."""
    sup = float(np.abs(grid).max(initial=0.0))
    if Q.sigma_mass == 0 or sup <= ZERO_BLOCK_RTOL * target / max(Q.sigma_mass, 1e-300):
        return np.zeros_like(grid)
    bound = target / Q.sigma_mass
    if only_if_larger and sup <= bound:
        return grid
    return grid * (bound / sup)


def make_haar_shift(rng_seed, F: Filtration, m: int, n: int, *,
                    coefficients: Coefficients = uniform_coefficients) -> ShiftOperator:
    """Random Haar shift of complexity ``(m, n)`` stored as big-Haar blocks.

    For every ``Q`` with ``rk Q + max(m, n) < depth`` and every
    ``R in Ch^n Q``, ``S in Ch^m Q`` a random kernel on ``Ch R x Ch S``
    is sandwiched as ``Delta_R T Delta_S``; the canonical kernel of the sum
    is rescaled so that ``sup |K_Q| = |Q|^{-1}``.
    """
    if min(m, n) < 0:
        raise ValueError("complexity must be non-negative")
    r = max(m, n)
    if r > F.depth:
        raise ValueError(f"complexity ({m}, {n}) exceeds depth {F.depth}")
    rng = np.random.default_rng(rng_seed)
    blocks = {}
    for Q in F:
        if Q.rank + r >= F.depth:
            continue
        level = r + 1
        grid_atoms = F.ch_r(Q, level)
        lo, hi = F.leaf_range(Q)
        B = np.zeros((hi - lo, hi - lo))
        for R in F.ch_r(Q, n):
            for S in F.ch_r(Q, m):
                B += _random_piece(rng, F, Q, R, S, 1, 1, grid_atoms, coefficients)
        grid = _rescale(_block_from_operator(F, Q, B, level), Q, 1.0)
        blocks[Q.id] = KernelBlock(Q, level, grid)
    return ShiftOperator(F, r, blocks, is_big_haar=True, annihilates_constants=True,
                         m=m, n=n, kind="haar")


def make_generalized_shift(rng_seed, F: Filtration, m: int, n: int, *,
                           pieces: Iterable[tuple[int, int]] = ((1, 1), (1, 2), (2, 1), (2, 2)),
                           coefficients: Coefficients = uniform_coefficients) -> ShiftOperator:
    """Random generalized Haar shift: sum of ``P^j_R T^{jk}_{RS} P^k_S``.

    ``P^1 = Delta`` and ``P^2 = E``. Every ``(j, k)`` piece of a block is
    scaled to kernel sup ``|Q|^{-1} / 4``, so the block kernel is at most
    ``|Q|^{-1}``. Atoms with ``rk Q + max(m, n) <= depth`` carry blocks.
    """
    if min(m, n) < 0:
        raise ValueError("complexity must be non-negative")
    r = max(m, n)
    if r > F.depth:
        raise ValueError(f"complexity ({m}, {n}) exceeds depth {F.depth}")
    pieces = [tuple(p) for p in pieces]
    if any(j not in (1, 2) or k not in (1, 2) for j, k in pieces):
        raise ValueError("pieces must be pairs from {1, 2}")
    rng = np.random.default_rng(rng_seed)
    blocks = {}
    for Q in F:
        if Q.rank + r > F.depth:
            continue
        level = grid_level(F, Q, r)
        grid_atoms = F.ch_r(Q, level)
        total = np.zeros((len(grid_atoms), len(grid_atoms)))
        for j, k in pieces:
            lo, hi = F.leaf_range(Q)
            piece = np.zeros((hi - lo, hi - lo))
            for R in F.ch_r(Q, n):
                for S in F.ch_r(Q, m):
                    piece += _random_piece(rng, F, Q, R, S, j, k, grid_atoms, coefficients)
            total += _rescale(_block_from_operator(F, Q, piece, level), Q, 0.25)
        blocks[Q.id] = KernelBlock(Q, level, total)
    annihilates = set(pieces) <= {(1, 1)}
    return ShiftOperator(F, r, blocks, is_big_haar=True, annihilates_constants=annihilates,
                         m=m, n=n, kind="generalized")


def martingale_multiplier(F: Filtration, signs) -> ShiftOperator:
    """``sum_Q s_Q Delta_Q`` over non-leaf atoms, shrunk only where its kernel exceeds ``|Q|^{-1}``.

    ``signs`` is indexed by atom id. On trees where every child carries at
    least half of its parent's mass no shrinking happens.
    """
    signs = np.asarray(signs, dtype=float)
    blocks = {}
    for Q in F:
        if F.is_leaf(Q):
            continue
        grid = _block_from_operator(F, Q, signs[Q.id] * delta_block(F, Q), 1)
        blocks[Q.id] = KernelBlock(Q, 1, _rescale(grid, Q, 1.0, only_if_larger=True))
    return ShiftOperator(F, 0, blocks, is_big_haar=True, annihilates_constants=True,
                         m=0, n=0, kind="multiplier")


def shift_from_dense(F: Filtration, Q: Atom, B: np.ndarray, r: int) -> ShiftOperator:
    """A single-block shift reproducing the scalar operator ``B`` (supported on ``Q x Q``)."""
    level = grid_level(F, Q, r)
    lo, hi = F.leaf_range(Q)
    grid = _block_from_operator(F, Q, B[lo:hi, lo:hi], level)
    return ShiftOperator(F, r, {Q.id: KernelBlock(Q, level, grid)}, kind="custom")


def paraproduct_example(F: Filtration, b: np.ndarray, Q: Atom, r: int) -> np.ndarray:
    """``sum_{R in Ch^r Q} Delta_R M_b E_Q`` on ``L^2(sigma)`` (scalar, full size)."""
    M = np.zeros((F.n_leaves, F.n_leaves))
    lo, hi = F.leaf_range(Q)
    EQ = expectation_block(F, Q)
    for R in F.ch_r(Q, r):
        s = _local(F, Q, R)
        D = np.zeros((hi - lo, hi - lo))
        D[s, s] = delta_block(F, R)
        M[lo:hi, lo:hi] += D @ np.diag(np.asarray(b, dtype=float)[lo:hi]) @ EQ
    return M


# -- structure checks ---------------------------------------------------------

@dataclass
class LocalizationReport:
    passed: bool
    radius: int
    max_ratio: float
    tolerance: float
    witness: dict | None
    pairs_checked: int
    note: str = "single rooted tree: localized automatically"

    def to_dict(self) -> dict:
        return {"passed": self.passed, "radius": self.radius, "max_ratio": self.max_ratio,
                "tolerance": self.tolerance, "witness": self.witness,
                "pairs_checked": self.pairs_checked, "note": self.note}


def lower_triangular_pairs(F: Filtration, r: int):
    """Pairs ``(R, Q)`` (``R`` non-leaf) covered by the ``r``-lower-triangular clauses.

    Clause 1: ``R ⊄ Q`` and ``rk R >= rk Q + r``. Clause 2: ``R ⊄ Q^{(r+1)}``
    and ``rk R >= rk Q - 1``; it is empty when ``Q`` has no ancestor of
    order ``r + 1``.
    """
    for Q in F:
        top = F.ancestor(Q, r + 1) if Q.rank >= r + 1 else None
        for R in F:
            if F.is_leaf(R):
                continue
            c1 = not F.contains(Q, R) and R.rank >= Q.rank + r
            c2 = top is not None and not F.contains(top, R) and R.rank >= Q.rank - 1
            if c1 or c2:
                yield R, Q, (1 if c1 else 2)


def _triangular_defect(TW: np.ndarray, W: MatrixMeasure, V: MatrixMeasure, r: int):
    """Largest ``||Delta^V_R T_W 1_Q e|| / ||1_Q e||`` over the clause pairs."""
    F = W.filtration
    d = W.dim
    # columns T_W 1_Q W(Q)^{+1/2}, one d-block per atom
    J = np.zeros((W.n_leaves * d, len(F) * d))
    for Q in F:
        lo, hi = F.leaf_range(Q)
        J[lo * d:hi * d, Q.id * d:(Q.id + 1) * d] = np.tile(W.pinv_sqrt(Q), (hi - lo, 1))
    C = TW @ J
    by_R: dict[int, list] = {}
    for R, Q, clause in lower_triangular_pairs(F, r):
        by_R.setdefault(R.id, []).append((Q, clause))
    sqrtV = V.sqrt_blocks
    worst, witness, count = 0.0, None, 0
    for rid, pairs in by_R.items():
        R = F.atoms[rid]
        lo, hi = F.leaf_range(R)
        cols = np.concatenate([np.arange(Q.id * d, (Q.id + 1) * d) for Q, _ in pairs])
        out = weighted_delta_block(V, R) @ C[lo * d:hi * d][:, cols]
        out = np.einsum("lab,lbk->lak", sqrtV[lo:hi], out.reshape(hi - lo, d, -1))
        out = out.reshape((hi - lo) * d, len(pairs), d).transpose(1, 0, 2)
        vals = np.linalg.norm(out, ord=2, axis=(1, 2))
        count += len(pairs)
        i = int(np.argmax(vals))
        if vals[i] > worst:
            Q, clause = pairs[i]
            worst = float(vals[i])
            witness = {"R": list(R.path), "R_rank": R.rank, "Q": list(Q.path),
                       "Q_rank": Q.rank, "clause": clause, "ratio": worst}
    return worst, witness, count


def check_well_localized(T: ShiftOperator, W: MatrixMeasure, V: MatrixMeasure,
                         r: int | None = None, *, tol: float = 1e-9) -> LocalizationReport:
    """Exhaustive radius-``r`` lower-triangularity check of ``T_W`` and ``T^*_V``.

    Every covered pair must satisfy
    ``||Delta^V_R T_W 1_Q e|| <= tol (1 + ||T_W||) ||1_Q e||`` for all ``e``,
    and likewise with ``T^*_V`` and the roles of ``W`` and ``V`` swapped.
    """
    if r is None:
        r = T.r
    TW = T.weighted_matrix(W)
    TV = T.adjoint_weighted(V)
    norm = weighted_op_norm(TW, W, V)
    bound = tol * (1.0 + norm)
    a, wa, ca = _triangular_defect(TW, W, V, r)
    b, wb, cb = _triangular_defect(TV, V, W, r)
    if b > a:
        worst, witness = b, dict(wb, side="adjoint")
    else:
        worst, witness = a, (dict(wa, side="operator") if wa else None)
    passed = worst <= bound
    return LocalizationReport(passed, r, worst, bound, None if passed else witness, ca + cb)


def ch_grid_sabotage(F: Filtration, r: int, rng_seed=0) -> ShiftOperator:
    """A block with kernel constant only on ``Ch^{r+2}`` declared as radius ``r``.

    Placed at the root (requires ``depth >= r + 2``); with ``W`` and ``V``
    of full rank it breaks lower triangularity at radius ``r``.
    """
    if F.depth < r + 2:
        raise ValueError("sabotage instance needs depth >= r + 2")
    rng = np.random.default_rng(rng_seed)
    Q = F.root
    atoms = F.ch_r(Q, r + 2)
    grid = rng.uniform(-1.0, 1.0, size=(len(atoms), len(atoms))) / max(Q.sigma_mass, 1e-300)
    return ShiftOperator(F, r, {Q.id: KernelBlock(Q, r + 2, grid)}, kind="sabotage")
