"""Brute-force reference implementations used by the tests.

Nothing here calls the package's linear algebra: trees are walked through
their paths, averages are explicit loops over leaves, kernels are summed
block by block and norms come from power iteration. Only the tree and
measure containers (plain data) are shared.
"""
import itertools

import numpy as np


def leaves_of(F, Q):
    """Leaf indices of Q found by path prefix, not by stored ranges."""
    return [i for i, L in enumerate(F.leaves) if L.path[:Q.rank] == Q.path]


def mat_pinv(A, tol=1e-12):
    lam, U = np.linalg.eigh((A + A.T) / 2)
    top = max(lam.max(), 0.0)
    out = np.zeros_like(A)
    for k in range(len(lam)):
        if top > 0 and lam[k] > tol * top:
            out += np.outer(U[:, k], U[:, k]) / lam[k]
    return out


def mat_sqrt(A, tol=1e-12):
    lam, U = np.linalg.eigh((A + A.T) / 2)
    top = max(lam.max(), 0.0)
    out = np.zeros_like(A)
    for k in range(len(lam)):
        if top > 0 and lam[k] > tol * top:
            out += np.outer(U[:, k], U[:, k]) * np.sqrt(lam[k])
    return out


def mass(W, Q):
    d = W.leaf_masses.shape[1]
    M = np.zeros((d, d))
    for i in leaves_of(W.filtration, Q):
        M += W.leaf_masses[i]
    return M


def w_expect(W, f, Q):
    F = W.filtration
    idx = leaves_of(F, Q)
    v = np.zeros(f.shape[1])
    for i in idx:
        v += W.leaf_masses[i] @ f[i]
    avg = mat_pinv(mass(W, Q)) @ v
    out = np.zeros_like(f)
    for i in idx:
        out[i] = avg
    return out


def w_delta(W, f, Q):
    F = W.filtration
    if Q.rank == F.depth:
        return np.zeros_like(f)
    out = -w_expect(W, f, Q)
    for C in F.children(Q):
        out += w_expect(W, f, C)
    return out


def w_norm(W, f):
    return float(np.sqrt(sum(f[i] @ W.leaf_masses[i] @ f[i] for i in range(len(f)))))


def w_inner(W, f, g):
    return float(sum(g[i] @ W.leaf_masses[i] @ f[i] for i in range(len(f))))


def kernel_entry(T, x, y):
    """K(x, y) as a triple sum over blocks and grid cells."""
    F = T.filtration
    total = 0.0
    for B in T.blocks.values():
        cells = F.ch_r(B.atom, B.level)
        for a, b in itertools.product(range(len(cells)), repeat=2):
            if x in leaves_of(F, cells[a]) and y in leaves_of(F, cells[b]):
                total += B.grid[a, b]
    return total


def kernel(T):
    n = T.filtration.n_leaves
    return np.array([[kernel_entry(T, x, y) for y in range(n)] for x in range(n)])


def apply_shift(K, W, f):
    """``(T_W f)(x) = sum_y K(x, y) W(y) f(y)``."""
    n, d = f.shape
    out = np.zeros((n, d))
    for x in range(n):
        for y in range(n):
            out[x] += K[x, y] * (W.leaf_masses[y] @ f[y])
    return out


def apply_shift_adjoint(K, V, g):
    """``(T^*_V g)(y) = sum_x K(x, y) V(x) g(x)``."""
    return apply_shift(K.T, V, g)


def power_norm(apply, apply_adj, W, V, n, d, iters=20000, seed=0, patience=200):
    """``||T: L^2(W) -> L^2(V)||`` by power iteration on ``T^* T``.

    Stops once the estimate has not moved by more than 1e-15 relative for
    ``patience`` consecutive steps.
    """
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((n, d))
    best, still = 0.0, 0
    for _ in range(iters):
        nf = w_norm(W, f)
        if nf == 0:
            return best
        f = f / nf
        g = apply(f)
        val = w_norm(V, g)
        still = still + 1 if val <= best * (1 + 1e-15) else 0
        best = max(best, val)
        if still >= patience:
            break
        f = apply_adj(g)
    return best


def dense_apply(K, W):
    """Vectorized ``f -> sum_y K(x, y) W(y) f(y)`` for power iteration."""
    return lambda f: K @ np.einsum("yab,yb->ya", W.leaf_masses, f)


def paraproduct_apply(T, K, W, V, f):
    """``sum_Q sum_{R in Ch^r Q} Delta^V_R T_W E^W_Q f`` with every piece brute forced."""
    F = T.filtration
    out = np.zeros_like(f)
    for Q in F:
        if Q.rank + T.r >= F.depth:
            continue
        h = apply_shift(K, W, w_expect(W, f, Q))
        for R in F.ch_r(Q, T.r):
            out += w_delta(V, h, R)
    return out


def a2(V, W):
    F = W.filtration
    best = 0.0
    for Q in F:
        if Q.sigma_mass > 0:
            M = mat_sqrt(mass(V, Q)) @ mat_sqrt(mass(W, Q))
            best = max(best, np.linalg.norm(M, 2) ** 2 / Q.sigma_mass ** 2)
    return best


def t1_rel(K, W, V, Q):
    """``sup_e ||1_Q T_W 1_Q e||_V / ||1_Q e||_W`` via the generalized eigenproblem on ran W(Q)."""
    F = W.filtration
    d = W.leaf_masses.shape[1]
    idx = leaves_of(F, Q)
    G = np.zeros((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = 1
        f = np.zeros((F.n_leaves, d))
        f[idx] = e
        g = apply_shift(K, W, f)
        mask = np.zeros(F.n_leaves, bool)
        mask[idx] = True
        g[~mask] = 0
        for k in range(d):
            e2 = np.zeros(d)
            e2[k] = 1
            f2 = np.zeros((F.n_leaves, d))
            f2[idx] = e2
            g2 = apply_shift(K, W, f2)
            g2[~mask] = 0
            G[j, k] = w_inner(V, g, g2)
    P = mat_pinv(mat_sqrt(mass(W, Q)))
    lam = np.linalg.eigvalsh(P @ G @ P)
    return float(np.sqrt(max(lam.max(), 0.0)))
