"""Matrix-valued measures on a filtration.

A measure is given by one PSD ``d x d`` mass per leaf; the mass of an atom
is the sum over its leaves. Vector functions are arrays of shape
``(n_leaves, d)``. The weighted space ``L^2(W)`` only sees a function
through ``W(L)^{1/2} f_L``, so dense operators are compared after
conjugating with the block-diagonal square roots of the leaf masses.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import block_diag

from .filtration import Atom, Filtration

PINV_RTOL = 1e-12


def _check_symmetric(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("expected a square matrix")
    scale = max(1.0, float(np.abs(A).max(initial=0.0)))
    if not np.allclose(A, A.T, rtol=0.0, atol=1e-10 * scale):
        raise ValueError("matrix is not symmetric")
    return (A + A.T) / 2


def _eig_cut(A: np.ndarray, rel_tol: float):
    lam, U = np.linalg.eigh(A)
    top = lam.max(initial=0.0)
    keep = lam > rel_tol * top if top > 0 else np.zeros_like(lam, dtype=bool)
    return lam, U, keep


def psd_pinv(A: np.ndarray, rel_tol: float = PINV_RTOL) -> np.ndarray:
    """Moore-Penrose pseudoinverse of a symmetric PSD matrix.

    Eigenvalues at or below ``rel_tol * lambda_max`` are treated as zero,
    so ``psd_pinv(0) == 0``.
    """
    A = _check_symmetric(A)
    lam, U, keep = _eig_cut(A, rel_tol)
    inv = np.zeros_like(lam)
    inv[keep] = 1.0 / lam[keep]
    return (U * inv) @ U.T


def psd_sqrt(A: np.ndarray, rel_tol: float = PINV_RTOL) -> np.ndarray:
    """Square root with the same eigenvalue cutoff as :func:`psd_pinv`.

    Without the cutoff, roundoff eigenvalues near ``1e-17`` on rank
    deficient masses would show up as ``1e-9``-sized square roots.
    """
    A = _check_symmetric(A)
    lam, U, keep = _eig_cut(A, rel_tol)
    root = np.zeros_like(lam)
    root[keep] = np.sqrt(lam[keep])
    return (U * root) @ U.T


def psd_pinv_sqrt(A: np.ndarray, rel_tol: float = PINV_RTOL) -> np.ndarray:
    A = _check_symmetric(A)
    lam, U, keep = _eig_cut(A, rel_tol)
    inv = np.zeros_like(lam)
    inv[keep] = 1.0 / np.sqrt(lam[keep])
    return (U * inv) @ U.T


def range_projector(A: np.ndarray, rel_tol: float = PINV_RTOL) -> np.ndarray:
    A = _check_symmetric(A)
    lam, U, keep = _eig_cut(A, rel_tol)
    V = U[:, keep]
    return V @ V.T


def is_psd(A: np.ndarray, tol: float = 1e-10) -> bool:
    A = np.asarray(A, dtype=float)
    if not np.allclose(A, A.T, rtol=0.0, atol=tol * max(1.0, float(np.abs(A).max(initial=0.0)))):
        return False
    lam = np.linalg.eigvalsh((A + A.T) / 2)
    return bool(lam.min(initial=0.0) >= -tol * (1.0 + max(lam.max(initial=0.0), 0.0)))


@dataclass(eq=False)
class MatrixMeasure:
    """PSD leaf masses on a filtration, aggregated eagerly to every atom."""

    filtration: Filtration
    leaf_masses: np.ndarray
    atom_masses: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        masses = np.array(self.leaf_masses, dtype=float)
        if masses.ndim != 3 or masses.shape[1] != masses.shape[2]:
            raise ValueError("leaf masses must have shape (n_leaves, d, d)")
        if masses.shape[0] != self.filtration.n_leaves:
            raise ValueError(f"expected {self.filtration.n_leaves} leaf masses, got {masses.shape[0]}")
        for L, A in enumerate(masses):
            if not is_psd(A):
                raise ValueError(f"leaf mass {L} is not symmetric PSD")
        masses = (masses + masses.transpose(0, 2, 1)) / 2
        F = self.filtration
        agg = np.zeros((len(F), self.dim, self.dim))
        csum = np.concatenate([np.zeros((1, self.dim, self.dim)), np.cumsum(masses, axis=0)])
        for Q in F:
            lo, hi = F.leaf_range(Q)
            agg[Q.id] = csum[hi] - csum[lo]
        for Q in F.leaves:
            agg[Q.id] = masses[F.leaf_range(Q)[0]]
        masses.setflags(write=False)
        agg.setflags(write=False)
        self.leaf_masses = masses
        self.atom_masses = agg

    @property
    def dim(self) -> int:
        return self.leaf_masses.shape[1]

    @property
    def n_leaves(self) -> int:
        return self.leaf_masses.shape[0]

    def aggregate(self, Q: Atom) -> np.ndarray:
        return self.atom_masses[Q.id]

    def trace_measure(self, Q: Atom) -> float:
        return float(np.trace(self.atom_masses[Q.id]))

    def pinv(self, Q: Atom) -> np.ndarray:
        return self._pinv[Q.id]

    def pinv_sqrt(self, Q: Atom) -> np.ndarray:
        return self._pinv_sqrt[Q.id]

    @cached_property
    def _pinv(self) -> np.ndarray:
        return np.stack([psd_pinv(A) for A in self.atom_masses])

    @cached_property
    def _pinv_sqrt(self) -> np.ndarray:
        return np.stack([psd_pinv_sqrt(A) for A in self.atom_masses])

    def averaging_row(self, Q: Atom) -> np.ndarray:
        """``W(Q)^+ ∫_Q dW`` as a ``d x (n_Q d)`` matrix on ``Q``'s leaves.

        Computed as ``B^+ L_Q`` with ``B`` the stacked leaf square roots
        (``B^T B = W(Q)``), which only loses ``cond(W(Q))^{1/2}`` digits
        instead of ``cond(W(Q))``.
        """
        return self._averaging_rows[Q.id]

    @cached_property
    def _averaging_rows(self) -> list:
        F = self.filtration
        d = self.dim
        rows = []
        for Q in F:
            lo, hi = F.leaf_range(Q)
            B = self.sqrt_blocks[lo:hi].reshape((hi - lo) * d, d)
            U, s, Vt = np.linalg.svd(B, full_matrices=False)
            top = s.max(initial=0.0)
            keep = s > np.sqrt(PINV_RTOL) * top if top > 0 else np.zeros_like(s, dtype=bool)
            Bp = (Vt[keep].T / s[keep]) @ U[:, keep].T
            rows.append(Bp @ block_diag(*self.sqrt_blocks[lo:hi]))
        return rows

    def sqrt_atom(self, Q: Atom) -> np.ndarray:
        return psd_sqrt(self.atom_masses[Q.id])

    # -- dense leaf-basis factors (size n_leaves*d) -----------------------
    @cached_property
    def gram(self) -> np.ndarray:
        """Block-diagonal leaf masses: ``||f||^2 = f.ravel() @ gram @ f.ravel()``."""
        return block_diag(*self.leaf_masses)

    @cached_property
    def sqrt_blocks(self) -> np.ndarray:
        return np.stack([psd_sqrt(A) for A in self.leaf_masses])

    @cached_property
    def pinv_sqrt_blocks(self) -> np.ndarray:
        return np.stack([psd_pinv_sqrt(A) for A in self.leaf_masses])

    @cached_property
    def pinv_blocks(self) -> np.ndarray:
        return np.stack([psd_pinv(A) for A in self.leaf_masses])

    @cached_property
    def sqrt_gram(self) -> np.ndarray:
        return block_diag(*self.sqrt_blocks)

    @cached_property
    def pinv_sqrt_gram(self) -> np.ndarray:
        return block_diag(*self.pinv_sqrt_blocks)

    @cached_property
    def pinv_gram(self) -> np.ndarray:
        return block_diag(*self.pinv_blocks)

    # -- functions -------------------------------------------------------
    def integral(self, f: np.ndarray, Q: Atom | None = None) -> np.ndarray:
        """The vector ``∫_Q dW f``."""
        f = self._as_function(f)
        if Q is None:
            Q = self.filtration.root
        lo, hi = self.filtration.leaf_range(Q)
        return np.einsum("lab,lb->a", self.leaf_masses[lo:hi], f[lo:hi])

    def norm(self, f: np.ndarray) -> float:
        f = self._as_function(f)
        return float(np.linalg.norm(np.einsum("lab,lb->la", self.sqrt_blocks, f)))

    def indicator(self, Q: Atom, e: np.ndarray) -> np.ndarray:
        """The function ``1_Q e``."""
        f = np.zeros((self.n_leaves, self.dim))
        lo, hi = self.filtration.leaf_range(Q)
        f[lo:hi] = np.asarray(e, dtype=float)
        return f

    def _as_function(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.ndim == 1 and self.dim == 1:
            f = f[:, None]
        if f.shape != (self.n_leaves, self.dim):
            raise ValueError(f"function of shape {f.shape} does not live on "
                             f"{self.n_leaves} leaves with d={self.dim}")
        return f

    # -- serialization ----------------------------------------------------
    def to_list(self) -> list:
        return [[[float(x) for x in row] for row in A] for A in self.leaf_masses]

    def to_json(self) -> str:
        return json.dumps(self.to_list())

    @classmethod
    def from_list(cls, F: Filtration, data: list) -> "MatrixMeasure":
        return cls(F, np.asarray(data, dtype=float))


def scalar_measure(F: Filtration, d: int = 1, weights=None) -> MatrixMeasure:
    """``w * I_d`` on every leaf; ``weights`` defaults to the filtration's own masses."""
    w = F.leaf_masses if weights is None else np.asarray(weights, dtype=float)
    return MatrixMeasure(F, w[:, None, None] * np.eye(d)[None])


def inner_product(f: np.ndarray, g: np.ndarray, M: MatrixMeasure) -> float:
    """``<f, g>_{L^2(W)} = sum_L <W(L) f_L, g_L>``."""
    f = M._as_function(f)
    g = M._as_function(g)
    return float(np.einsum("lab,lb,la->", M.leaf_masses, f, g))


def random_psd(rng: np.random.Generator, d: int, condition_cap: float = np.inf, *,
               rank: int | None = None) -> np.ndarray:
    """``G G^T`` with standard normal ``G``, eigenvalues clipped to ``[lmax/cap, lmax]``.

    The result is normalized to trace ``d``. ``rank`` zeroes the smallest
    ``d - rank`` eigenvalues after clipping.
    """
    G = rng.standard_normal((d, d))
    lam, U = np.linalg.eigh(G @ G.T)
    lam = np.clip(lam, lam.max() / condition_cap, None)
    if rank is not None and rank < d:
        lam[: d - rank] = 0.0
    lam *= d / lam.sum()
    A = (U * lam) @ U.T
    return (A + A.T) / 2


def random_measure(rng_seed, F: Filtration, d: int, condition_cap: float = 10.0, *,
                   rank_deficient_prob: float = 0.0, zero_prob: float = 0.0,
                   log_scale: float = 0.5, relative_to_sigma: bool = True) -> MatrixMeasure:
    """Seeded random matrix measure.

    Each leaf mass is a random PSD matrix (see :func:`random_psd`) times a
    log-normal factor, times the leaf's sigma mass when
    ``relative_to_sigma``. With ``condition_cap == 1`` every leaf mass is a
    positive multiple of the identity.
    """
    if condition_cap < 1:
        raise ValueError("condition_cap must be >= 1")
    rng = np.random.default_rng(rng_seed)
    masses = np.zeros((F.n_leaves, d, d))
    for L in range(F.n_leaves):
        rank = None
        if d > 1 and rng.random() < rank_deficient_prob:
            rank = int(rng.integers(1, d))
        A = random_psd(rng, d, condition_cap, rank=rank)
        scale = float(np.exp(log_scale * rng.standard_normal()))
        if relative_to_sigma:
            scale *= F.leaf_masses[L]
        if rng.random() < zero_prob:
            scale = 0.0
        masses[L] = scale * A
    return MatrixMeasure(F, masses)
