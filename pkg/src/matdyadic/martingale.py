"""Expectations and martingale differences, unweighted and matrix weighted.

Every projection exists in two forms: a function transformer acting on
``(n_leaves, d)`` arrays, and a dense matrix acting on the flattened
leaf basis (index ``leaf * d + component``). The ``*_block`` variants
return only the square block on the atom's own leaves, which is where
these operators live.

Atoms with zero sigma mass average to zero, and leaves carry no
martingale difference.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .filtration import Atom, Filtration
from .measure import MatrixMeasure


# -- unweighted ---------------------------------------------------------------

def average(F: Filtration, f: np.ndarray, Q: Atom) -> np.ndarray:
    """``<f>_Q`` with respect to sigma, zero when ``sigma(Q) = 0``."""
    f = np.asarray(f, dtype=float)
    if Q.sigma_mass == 0:
        return np.zeros(f.shape[1:])
    lo, hi = F.leaf_range(Q)
    return np.tensordot(F.leaf_masses[lo:hi], f[lo:hi], axes=1) / Q.sigma_mass


def expectation(F: Filtration, f: np.ndarray, Q: Atom) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    out = np.zeros_like(f)
    lo, hi = F.leaf_range(Q)
    out[lo:hi] = average(F, f, Q)
    return out


def delta(F: Filtration, f: np.ndarray, Q: Atom) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if F.is_leaf(Q):
        return np.zeros_like(f)
    out = -expectation(F, f, Q)
    for R in F.children(Q):
        out += expectation(F, f, R)
    return out


def expectation_block(F: Filtration, Q: Atom, d: int = 1) -> np.ndarray:
    lo, hi = F.leaf_range(Q)
    n = hi - lo
    if Q.sigma_mass == 0:
        return np.zeros((n * d, n * d))
    E = np.tile(F.leaf_masses[lo:hi] / Q.sigma_mass, (n, 1))
    return np.kron(E, np.eye(d))


def delta_block(F: Filtration, Q: Atom, d: int = 1) -> np.ndarray:
    lo, hi = F.leaf_range(Q)
    n = (hi - lo) * d
    if F.is_leaf(Q):
        return np.zeros((n, n))
    out = -expectation_block(F, Q, d)
    for R in F.children(Q):
        a, b = F.leaf_range(R)
        out[(a - lo) * d:(b - lo) * d, (a - lo) * d:(b - lo) * d] += expectation_block(F, R, d)
    return out


def _embed(F: Filtration, Q: Atom, block: np.ndarray, d: int) -> np.ndarray:
    N = F.n_leaves * d
    out = np.zeros((N, N))
    s = F.leaf_slice(Q, d)
    out[s, s] = block
    return out


def expectation_matrix(F: Filtration, Q: Atom, d: int = 1) -> np.ndarray:
    return _embed(F, Q, expectation_block(F, Q, d), d)


def delta_matrix(F: Filtration, Q: Atom, d: int = 1) -> np.ndarray:
    return _embed(F, Q, delta_block(F, Q, d), d)


# -- weighted -----------------------------------------------------------------

def weighted_average(W: MatrixMeasure, f: np.ndarray, Q: Atom) -> np.ndarray:
    """``W(Q)^+ ∫_Q dW f``; lies in the range of ``W(Q)``."""
    lo, hi = W.filtration.leaf_range(Q)
    f = W._as_function(f)
    return W.averaging_row(Q) @ f[lo:hi].ravel()


def weighted_expectation(W: MatrixMeasure, f: np.ndarray, Q: Atom) -> np.ndarray:
    out = np.zeros((W.n_leaves, W.dim))
    lo, hi = W.filtration.leaf_range(Q)
    out[lo:hi] = weighted_average(W, f, Q)
    return out


def weighted_delta(W: MatrixMeasure, f: np.ndarray, Q: Atom) -> np.ndarray:
    F = W.filtration
    out = np.zeros((W.n_leaves, W.dim))
    if F.is_leaf(Q):
        return out
    out -= weighted_expectation(W, f, Q)
    for R in F.children(Q):
        out += weighted_expectation(W, f, R)
    return out


def weighted_expectation_block(W: MatrixMeasure, Q: Atom) -> np.ndarray:
    F = W.filtration
    lo, hi = F.leaf_range(Q)
    return np.tile(W.averaging_row(Q), (hi - lo, 1))


def weighted_delta_block(W: MatrixMeasure, Q: Atom) -> np.ndarray:
    F = W.filtration
    d = W.dim
    lo, hi = F.leaf_range(Q)
    n = (hi - lo) * d
    if F.is_leaf(Q):
        return np.zeros((n, n))
    out = -weighted_expectation_block(W, Q)
    for R in F.children(Q):
        a, b = F.leaf_range(R)
        out[(a - lo) * d:(b - lo) * d, (a - lo) * d:(b - lo) * d] += weighted_expectation_block(W, R)
    return out


def weighted_expectation_matrix(W: MatrixMeasure, Q: Atom) -> np.ndarray:
    return _embed(W.filtration, Q, weighted_expectation_block(W, Q), W.dim)


def weighted_delta_matrix(W: MatrixMeasure, Q: Atom) -> np.ndarray:
    return _embed(W.filtration, Q, weighted_delta_block(W, Q), W.dim)


def weighted_delta_sum_block(W: MatrixMeasure, Q: Atom, atoms) -> np.ndarray:
    """Sum of ``Delta^W_R`` over ``atoms`` (all inside ``Q``), as a block on ``Q``'s leaves."""
    F = W.filtration
    d = W.dim
    lo, hi = F.leaf_range(Q)
    out = np.zeros(((hi - lo) * d, (hi - lo) * d))
    for R in atoms:
        if F.is_leaf(R):
            continue
        a, b = F.leaf_range(R)
        if a < lo or b > hi:
            raise ValueError(f"{R} is not inside {Q}")
        s = slice((a - lo) * d, (b - lo) * d)
        out[s, s] += weighted_delta_block(W, R)
    return out


def mean_zero_projection_block(V: MatrixMeasure, Q: Atom) -> np.ndarray:
    """``P^V_Q = 1_Q - E^V_Q`` restricted to ``Q``'s leaves.

    This is the ``L^2(V)`` orthogonal projection onto functions supported
    on ``Q`` and orthogonal to the constants ``1_Q e``; it equals the sum
    of ``Delta^V_R`` over all ``R ⊂ Q``.
    """
    n = V.filtration.leaf_slice(Q, V.dim)
    size = n.stop - n.start
    return np.eye(size) - weighted_expectation_block(V, Q)


def mean_zero_projection(V: MatrixMeasure, Q: Atom) -> np.ndarray:
    return _embed(V.filtration, Q, mean_zero_projection_block(V, Q), V.dim)


def decompose(W: MatrixMeasure, f: np.ndarray, Q0: Atom | None = None, *, tol: float = 1e-10):
    """Orthogonal decomposition of ``f`` (supported on ``Q0``) in ``L^2(W)``.

    Returns ``[(Q, Delta^W_Q f) for non-leaf Q ⊂ Q0] + [(Q0, E^W_{Q0} f)]``.
    The components are pairwise orthogonal in ``L^2(W)`` and sum to ``f``.
    """
    F = W.filtration
    if Q0 is None:
        Q0 = F.root
    f = W._as_function(f)
    outside = f.copy()
    lo, hi = F.leaf_range(Q0)
    outside[lo:hi] = 0.0
    if W.norm(outside) > tol * max(1.0, W.norm(f)):
        raise ValueError("f is not supported on Q0")
    parts = [(Q, weighted_delta(W, f, Q)) for Q in F.subtree(Q0) if not F.is_leaf(Q)]
    parts.append((Q0, weighted_expectation(W, f, Q0)))
    return parts


@dataclass(frozen=True)
class ProjectionSpec:
    """One of ``E_Q``, ``Delta_Q``, ``E^W_Q``, ``Delta^W_Q`` as a first-class object.

    ``kind`` is ``"E"``, ``"D"``, ``"EW"`` or ``"DW"``; the weighted kinds
    need ``measure``. Unweighted kinds act on ``d``-vector functions
    componentwise.
    """

    atom: Atom
    kind: str
    filtration: Filtration
    measure: MatrixMeasure | None = None
    d: int = 1

    def __post_init__(self):
        if self.kind not in ("E", "D", "EW", "DW"):
            raise ValueError(f"unknown projection kind {self.kind!r}")
        if self.kind in ("EW", "DW") and self.measure is None:
            raise ValueError("weighted projections need a measure")

    @property
    def dim(self) -> int:
        return self.measure.dim if self.measure is not None else self.d

    def apply(self, f: np.ndarray) -> np.ndarray:
        F, Q = self.filtration, self.atom
        if self.kind == "E":
            return expectation(F, f, Q)
        if self.kind == "D":
            return delta(F, f, Q)
        if self.kind == "EW":
            return weighted_expectation(self.measure, f, Q)
        return weighted_delta(self.measure, f, Q)

    def matrix(self) -> np.ndarray:
        F, Q = self.filtration, self.atom
        if self.kind == "E":
            return expectation_matrix(F, Q, self.d)
        if self.kind == "D":
            return delta_matrix(F, Q, self.d)
        if self.kind == "EW":
            return weighted_expectation_matrix(self.measure, Q)
        return weighted_delta_matrix(self.measure, Q)


# -- dense utilities ------------------------------------------------------------

def weighted_op_norm(M: np.ndarray, W_in: MatrixMeasure, V_out: MatrixMeasure) -> float:
    """Norm of a leaf-basis matrix as a map ``L^2(W_in) -> L^2(V_out)``.

    ``M`` must respect ``L^2(W_in)`` equivalence (vanish on null functions),
    which holds for every operator built in this package.
    """
    A = V_out.sqrt_gram @ M @ W_in.pinv_sqrt_gram
    if A.size == 0:
        return 0.0
    return float(np.linalg.norm(A, 2))


def weighted_adjoint(M: np.ndarray, W_in: MatrixMeasure, V_out: MatrixMeasure) -> np.ndarray:
    """Adjoint of ``M: L^2(W_in) -> L^2(V_out)`` as a map ``L^2(V_out) -> L^2(W_in)``."""
    return W_in.pinv_gram @ M.T @ V_out.gram


def save_dense(path, M: np.ndarray) -> None:
    """Row-major binary dump with a shape header (NumPy ``.npy``)."""
    np.save(Path(path), np.ascontiguousarray(M))


def load_dense(path) -> np.ndarray:
    return np.load(Path(path))
