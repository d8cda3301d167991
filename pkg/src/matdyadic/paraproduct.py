"""Weighted paraproducts of a well localized shift and their exchange identities.

``Pi^W f = sum_Q sum_{R in Ch^r Q} Delta^V_R T_W E^W_Q f`` over atoms ``Q``
whose ``Ch^r`` is not made of leaves. The ``V``-side paraproduct is the
same construction for ``T^*_V`` with the measures swapped.

Identity checks compare operators in the canonical representation
``L_V M L_W^+`` (``L`` the square roots of the leaf masses): it is an
isometric copy of the weighted spaces, so weighted adjoints become
transposes and functions that vanish in ``L^2`` are exactly zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analysis import Certificate, carleson_constant, weighted_norm
from .filtration import Atom, Filtration
from .martingale import weighted_delta_block
from .measure import MatrixMeasure
from .shift import ShiftOperator, check_well_localized

IDENTITY_TOL = 1e-10


@dataclass(eq=False)
class Paraproduct:
    """Dense paraproduct. ``side="W"`` maps ``L^2(W) -> L^2(V)``; ``side="V"`` the reverse."""

    r: int
    base: ShiftOperator
    matrix: np.ndarray
    side: str
    W: MatrixMeasure = field(repr=False)
    V: MatrixMeasure = field(repr=False)

    @property
    def domain(self) -> MatrixMeasure:
        return self.W if self.side == "W" else self.V

    @property
    def codomain(self) -> MatrixMeasure:
        return self.V if self.side == "W" else self.W

    def norm(self) -> float:
        return weighted_norm(self.matrix, self.domain, self.codomain)

    def canonical(self) -> np.ndarray:
        return canonical_form(self.matrix, self.domain, self.codomain)


def canonical_form(M: np.ndarray, W_in: MatrixMeasure, V_out: MatrixMeasure) -> np.ndarray:
    """``L_V M L_W^+``: the operator as a plain matrix between Euclidean spaces."""
    return V_out.sqrt_gram @ M @ W_in.pinv_sqrt_gram


def _level_delta_local(V: MatrixMeasure, Q: Atom, r: int) -> np.ndarray | None:
    F = V.filtration
    if Q.rank + r >= F.depth:
        return None
    d = V.dim
    lo, hi = F.leaf_range(Q)
    S = np.zeros(((hi - lo) * d, (hi - lo) * d))
    for R in F.ch_r(Q, r):
        a, b = F.leaf_range(R)
        s = slice((a - lo) * d, (b - lo) * d)
        S[s, s] = weighted_delta_block(V, R)
    return S


def _assemble(TW: np.ndarray, W: MatrixMeasure, V: MatrixMeasure, r: int, *, anchor_root: bool) -> np.ndarray:
    F = W.filtration
    d = W.dim
    N = W.n_leaves * d
    Pi = np.zeros((N, N))
    ones_root = TW.reshape(N, W.n_leaves, d).sum(axis=1) if anchor_root else None
    for Q in F:
        S = _level_delta_local(V, Q, r)
        if S is None:
            continue
        s = F.leaf_slice(Q, d)
        lo, hi = F.leaf_range(Q)
        if anchor_root:
            cols = ones_root[s]
        else:
            cols = TW[s, s].reshape(s.stop - s.start, hi - lo, d).sum(axis=1)
        Pi[s, s] += S @ cols @ W.averaging_row(Q)
    return Pi


def build_paraproduct(T: ShiftOperator, W: MatrixMeasure, V: MatrixMeasure, side: str = "W", *,
                      via_root: bool = False, check: bool = True) -> Paraproduct:
    """Assemble ``Pi^W_T`` (``side="W"``) or ``Pi^V_{T^*}`` (``side="V"``).

    ``via_root`` replaces ``T_W 1_Q`` by ``T_W 1`` (the root indicator),
    which gives the same operator for well localized ``T``. With ``check``
    the localization of ``T`` is verified first.
    """
    if side not in ("W", "V"):
        raise ValueError("side must be 'W' or 'V'")
    if check:
        rep = check_well_localized(T, W, V)
        if not rep.passed:
            raise ValueError(f"operator is not well localized of radius {T.r}: {rep.witness}")
    if side == "W":
        M = _assemble(T.weighted_matrix(W), W, V, T.r, anchor_root=via_root)
    else:
        M = _assemble(T.adjoint_weighted(V), V, W, T.r, anchor_root=via_root)
    return Paraproduct(T.r, T, M, side, W, V)


# -- identity checks ------------------------------------------------------------

def _canonical_deltas(W: MatrixMeasure) -> dict:
    """``L_W Delta^W_Q L_W^+`` on ``Q``'s leaves for non-leaf ``Q`` (orthogonal projections)."""
    F = W.filtration
    d = W.dim
    out = {}
    for Q in F:
        if F.is_leaf(Q):
            continue
        s = F.leaf_slice(Q, d)
        out[Q.id] = W.sqrt_gram[s, s] @ weighted_delta_block(W, Q) @ W.pinv_sqrt_gram[s, s]
    return out


def _sandwich_residuals(mats: dict, dW: dict, dV: dict, F: Filtration, d: int):
    """``||Dhat_R M Dhat_Q||_F`` for every matrix in ``mats`` and every non-leaf pair."""
    out = {k: {} for k in mats}
    for qid, DQ in dW.items():
        Q = F.atoms[qid]
        sq = F.leaf_slice(Q, d)
        right = {k: M[:, sq] @ DQ for k, M in mats.items()}
        for rid, DR in dV.items():
            R = F.atoms[rid]
            sr = F.leaf_slice(R, d)
            for k in mats:
                out[k][(rid, qid)] = float(np.linalg.norm(DR @ right[k][sr]))
    return out


@dataclass
class ReplacementReport:
    passed: bool
    tolerance: float
    scale: float
    clause_residuals: dict
    t_para_residual: float
    decomposition_residual: float
    witness: dict | None = None
    pairs_checked: int = 0

    def to_dict(self) -> dict:
        return {"passed": self.passed, "tolerance": self.tolerance, "scale": self.scale,
                "clause_residuals": dict(self.clause_residuals),
                "t_para_residual": self.t_para_residual,
                "decomposition_residual": self.decomposition_residual,
                "witness": self.witness, "pairs_checked": self.pairs_checked}


def t_para_residual(T: ShiftOperator, W: MatrixMeasure, V: MatrixMeasure, TW: np.ndarray | None = None):
    """Largest ``||Delta^V_R T_W (1_S - 1_Q) e|| / ||e||`` over ``R in Ch^r Q``, ``S ⊃ Q``.

    Returns ``(residual, witness)``; the residual is measured in ``L^2(V)``
    for unit ``e``.
    """
    F = W.filtration
    d = W.dim
    r = T.r
    if TW is None:
        TW = T.weighted_matrix(W)
    N = W.n_leaves
    ones = {Q.id: TW[:, F.leaf_slice(Q, d)].reshape(N * d, -1, d).sum(axis=1) for Q in F}
    worst, witness = 0.0, None
    for R in F:
        if F.is_leaf(R) or R.rank < r:
            continue
        Q = F.ancestor(R, r)
        sr = F.leaf_slice(R, d)
        lo, hi = F.leaf_range(R)
        DR = weighted_delta_block(V, R)
        for k in range(1, Q.rank + 1):
            S = F.ancestor(Q, k)
            diff = DR @ (ones[S.id][sr] - ones[Q.id][sr])
            diff = np.einsum("lab,lbk->lak", V.sqrt_blocks[lo:hi], diff.reshape(hi - lo, d, d))
            val = float(np.linalg.norm(diff.reshape(-1, d), 2))
            if val > worst:
                worst = val
                witness = {"R": list(R.path), "Q": list(Q.path), "S": list(S.path), "residual": val}
    return worst, witness


def check_replacement(T: ShiftOperator, W: MatrixMeasure, V: MatrixMeasure,
                      Pi: Paraproduct | None = None, *, tol: float = IDENTITY_TOL,
                      Pi_V: Paraproduct | None = None) -> ReplacementReport:
    """Verify the exchange identities between ``Pi^W`` and ``T_W`` pair by pair.

    For non-leaf ``Q, R``: ``Delta^V_R Pi^W Delta^W_Q = 0`` when
    ``rk R <= r + rk Q`` (clause 1) or ``R ⊄ Q`` (clause 2), and
    ``= Delta^V_R T_W Delta^W_Q`` when ``rk R > r + rk Q`` (clause 3).
    Also checks the invariance ``Delta^V_R T_W 1_Q e = Delta^V_R T_W 1_S e``
    and that ``T_W - Pi^W - (Pi^V)^*`` vanishes between levels more than
    ``r`` apart. Residuals are Frobenius norms in canonical form, an upper
    bound for the weighted operator norm; ``scale = 1 + ||T_W|| + ||Pi^W|| + ||Pi^V||``.
    """
    F = W.filtration
    d = W.dim
    r = T.r
    if Pi is None:
        Pi = build_paraproduct(T, W, V, "W", check=False)
    if Pi_V is None:
        Pi_V = build_paraproduct(T, W, V, "V", check=False)
    TW = T.weighted_matrix(W)
    T_hat = canonical_form(TW, W, V)
    P_hat = Pi.canonical()
    PV_hat = Pi_V.canonical()
    scale = 1.0 + float(np.linalg.norm(T_hat, 2)) + float(np.linalg.norm(P_hat, 2)) \
        + float(np.linalg.norm(PV_hat, 2))
    dW, dV = _canonical_deltas(W), _canonical_deltas(V)
    res = _sandwich_residuals({"pi": P_hat, "gap": P_hat - T_hat, "dec": T_hat - P_hat - PV_hat.T},
                              dW, dV, F, d)
    clause = {1: 0.0, 2: 0.0, 3: 0.0}
    dec = 0.0
    witness, worst_rel = None, 0.0
    pairs = 0
    for (rid, qid), pi_val in res["pi"].items():
        R, Q = F.atoms[rid], F.atoms[qid]
        pairs += 1
        vals = []
        if R.rank <= r + Q.rank:
            vals.append((1, pi_val))
        if not F.contains(Q, R):
            vals.append((2, pi_val))
        if R.rank > r + Q.rank:
            vals.append((3, res["gap"][(rid, qid)]))
        if abs(R.rank - Q.rank) > r:
            dec = max(dec, res["dec"][(rid, qid)])
        for c, v in vals:
            clause[c] = max(clause[c], v)
            if v > worst_rel:
                worst_rel = v
                witness = {"R": list(R.path), "Q": list(Q.path), "clause": c, "residual": v}
    tp, tp_wit = t_para_residual(T, W, V, TW)
    worst = max(max(clause.values()), tp, dec)
    passed = worst <= tol * scale
    if not passed:
        if tp >= max(clause.values()) and tp >= dec:
            witness = dict(tp_wit or {}, check="t-para")
        elif dec > max(clause.values()):
            witness = {"check": "decomposition", "residual": dec}
    return ReplacementReport(passed, tol, scale, clause, tp, dec, None if passed else witness, pairs)


def two_path_difference(T: ShiftOperator, W: MatrixMeasure, V: MatrixMeasure) -> float:
    """Entrywise gap between the ``1_Q`` and root-anchored assemblies, in canonical form."""
    a = build_paraproduct(T, W, V, check=False).canonical()
    b = build_paraproduct(T, W, V, via_root=True, check=False).canonical()
    return float(np.abs(a - b).max(initial=0.0))


def paraproduct_norm_bound(Pi: Paraproduct, W: MatrixMeasure, V: MatrixMeasure, T1: float, *,
                           params=None) -> Certificate:
    """``||Pi^W|| <= C(d)^{1/2} T1`` with ``T1`` the best constant of the deep testing condition."""
    lhs = weighted_norm(Pi.matrix, W, V) if Pi.side == "W" else weighted_norm(Pi.matrix, V, W)
    return Certificate(f"paraproduct-norm-{Pi.side}", lhs, math.sqrt(carleson_constant(W.dim)) * T1,
                       dict(params or {}))
