"""Independent brute-force oracles used to freeze expected values.

Everything here is written as plainly as possible (index loops, explicit
enumerations) and stays independent of the library code paths it checks.
"""

import numpy as np


def enum_matricize(t, mode):
    """Mode unfolding by explicit index enumeration.

    Entry (i_mode, col) where col linearizes the remaining indices with the
    smallest remaining mode varying fastest.
    """
    t = np.asarray(t)
    shape = t.shape
    rest = [i for i in range(t.ndim) if i != mode]
    ncols = int(np.prod([shape[i] for i in rest])) if rest else 1
    out = np.zeros((shape[mode], ncols))
    for idx in np.ndindex(*shape):
        col = 0
        stride = 1
        for i in rest:
            col += idx[i] * stride
            stride *= shape[i]
        out[idx[mode], col] = t[idx]
    return out


def enum_khatri_rao(mats):
    """K(row, r) = prod_i mats[i][x_i, r], first listed index fastest."""
    shapes = [m.shape[0] for m in mats]
    rank = mats[0].shape[1]
    nrows = int(np.prod(shapes))
    out = np.zeros((nrows, rank))
    for r in range(rank):
        for row in range(nrows):
            rem = row
            val = 1.0
            for i, m in enumerate(mats):
                x = rem % shapes[i]
                rem //= shapes[i]
                val *= m[x, r]
            out[row, r] = val
    return out


def enum_reconstruct(factors, weights):
    """t(i1..iN) = sum_r w_r prod_n factors[n][i_n, r] by explicit loops."""
    shape = tuple(f.shape[0] for f in factors)
    rank = factors[0].shape[1]
    out = np.zeros(shape)
    for idx in np.ndindex(*shape):
        acc = 0.0
        for r in range(rank):
            term = weights[r]
            for n, f in enumerate(factors):
                term *= f[idx[n], r]
            acc += term
        out[idx] = acc
    return out


def oracle_mttkrp(t, factors, mode):
    """Materialized X_(n) K^(n) product built with the enumeration oracles."""
    x = enum_matricize(t, mode)
    k = enum_khatri_rao([f for i, f in enumerate(factors) if i != mode])
    return x @ k


def random_factors(rng, shape, rank):
    return [rng.standard_normal((a, rank)) for a in shape]


def rank_tensor(rng, shape, rank, positive=False):
    """Exact rank-R tensor plus the factors that generate it."""
    if positive:
        factors = [rng.random((a, rank)) + 0.1 for a in shape]
    else:
        factors = random_factors(rng, shape, rank)
    weights = np.ones(rank)
    return enum_reconstruct(factors, weights), factors


def fd_gradient(t, factors, h=1e-6):
    """Central finite differences of f = 0.5 * ||t - model||_F^2."""

    def objective(fs):
        recon = enum_reconstruct(fs, np.ones(fs[0].shape[1]))
        return 0.5 * np.linalg.norm(t - recon) ** 2

    grads = []
    for n, f in enumerate(factors):
        g = np.zeros_like(f)
        for i in range(f.shape[0]):
            for r in range(f.shape[1]):
                bumped = [x.copy() for x in factors]
                bumped[n][i, r] += h
                up = objective(bumped)
                bumped[n][i, r] -= 2 * h
                down = objective(bumped)
                g[i, r] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def windowed_ssim(ref, test, peak, window=11, sigma=1.5):
    """Sliding-window SSIM by explicit per-window weighted statistics."""
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    half = window // 2
    ax = np.arange(window) - half
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    w /= w.sum()
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    rows, cols = ref.shape
    vals = []
    for i in range(rows - window + 1):
        for j in range(cols - window + 1):
            a = ref[i : i + window, j : j + window]
            b = test[i : i + window, j : j + window]
            mu_a = np.sum(w * a)
            mu_b = np.sum(w * b)
            var_a = np.sum(w * (a - mu_a) ** 2)
            var_b = np.sum(w * (b - mu_b) ** 2)
            cov = np.sum(w * (a - mu_a) * (b - mu_b))
            vals.append(
                ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
            )
    return float(np.mean(vals))
