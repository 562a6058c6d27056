"""Hot numeric kernels, each in a numba and a pure-numpy flavour.

The public names at the bottom of the module point at the numba versions
unless ``RELAYGP_DISABLE_NUMBA`` is set (see ``_accel``).  Both flavours are
importable under ``*_nb`` / ``*_np`` so benchmarks and tests can compare them.
"""

import numpy as np

from ._accel import USE_NUMBA, njit


# ---------------------------------------------------------------------------
# squared distances and SE Gram blocks


def sqdist_np(x, y):
    diff = x[:, None] - y[None, :]
    return diff * diff


@njit
def sqdist_nb(x, y):
    n = x.shape[0]
    m = y.shape[0]
    out = np.empty((n, m))
    for i in range(n):
        xi = x[i]
        for j in range(m):
            t = xi - y[j]
            out[i, j] = t * t
    return out


def se_gram_np(x, y, d):
    return np.exp(sqdist_np(x, y) * (-0.5 / (d * d)))


@njit
def se_gram_nb(x, y, d):
    n = x.shape[0]
    m = y.shape[0]
    c = -0.5 / (d * d)
    out = np.empty((n, m))
    for i in range(n):
        xi = x[i]
        for j in range(m):
            t = xi - y[j]
            out[i, j] = np.exp(c * t * t)
    return out


def scaled_gram_stack_np(sq, w, ds, shift):
    """Stack of ``diag(w) exp(-sq/(2d^2)) diag(w) + shift*I`` over ``ds``."""
    c = -0.5 / (ds * ds)
    out = np.exp(sq[None, :, :] * c[:, None, None])
    out *= w[None, :, None]
    out *= w[None, None, :]
    idx = np.arange(sq.shape[0])
    out[:, idx, idx] += shift
    return out


@njit
def scaled_gram_stack_nb(sq, w, ds, shift):
    nd = ds.shape[0]
    m = sq.shape[0]
    out = np.empty((nd, m, m))
    for k in range(nd):
        c = -0.5 / (ds[k] * ds[k])
        for i in range(m):
            out[k, i, i] = w[i] * w[i] + shift
            for j in range(i):
                v = w[i] * w[j] * np.exp(c * sq[i, j])
                out[k, i, j] = v
                out[k, j, i] = v
    return out


def chol_terms_np(sq, w, b, ds, shift):
    """For each d: log|A| and b^T A^{-1} b, A = diag(w) exp(-sq/(2d^2)) diag(w) + shift I.

    ``shift`` is per-d.  Entries whose Cholesky factorization fails get
    ``ok = False`` and NaN terms.
    """
    nd = ds.shape[0]
    stack = scaled_gram_stack_np(sq, w, ds, 0.0)
    idx = np.arange(sq.shape[0])
    stack[:, idx, idx] += shift[:, None]
    logdet = np.full(nd, np.nan)
    quad = np.full(nd, np.nan)
    ok = np.zeros(nd, dtype=np.bool_)
    for k in range(nd):
        try:
            L = np.linalg.cholesky(stack[k])
        except np.linalg.LinAlgError:
            continue
        h = np.linalg.solve(L, b)
        logdet[k] = 2.0 * np.log(np.diag(L)).sum()
        quad[k] = h @ h
        ok[k] = True
    return logdet, quad, ok


@njit
def chol_terms_nb(sq, w, b, ds, shift):
    nd = ds.shape[0]
    m = sq.shape[0]
    logdet = np.full(nd, np.nan)
    quad = np.full(nd, np.nan)
    ok = np.zeros(nd, dtype=np.bool_)
    L = np.empty((m, m))
    h = np.empty(m)
    for k in range(nd):
        c = -0.5 / (ds[k] * ds[k])
        good = True
        ld = 0.0
        for i in range(m):
            for j in range(i + 1):
                if i == j:
                    acc = w[i] * w[i] + shift[k]
                else:
                    acc = w[i] * w[j] * np.exp(c * sq[i, j])
                for p in range(j):
                    acc -= L[i, p] * L[j, p]
                if i == j:
                    if not acc > 0.0:
                        good = False
                        break
                    L[i, i] = np.sqrt(acc)
                    ld += np.log(L[i, i])
                else:
                    L[i, j] = acc / L[j, j]
            if not good:
                break
        if not good:
            continue
        q = 0.0
        for i in range(m):
            acc = b[i]
            for p in range(i):
                acc -= L[i, p] * h[p]
            h[i] = acc / L[i, i]
            q += h[i] * h[i]
        logdet[k] = 2.0 * ld
        quad[k] = q
        ok[k] = True
    return logdet, quad, ok


# ---------------------------------------------------------------------------
# bordered-inverse updates (sliding window)


def downsize_np(kinv):
    a = kinv[0, 0]
    b = kinv[0, 1:]
    return kinv[1:, 1:] - np.outer(b, b) / a


@njit
def downsize_nb(kinv):
    n = kinv.shape[0] - 1
    a = kinv[0, 0]
    out = np.empty((n, n))
    for i in range(n):
        bi = kinv[0, i + 1] / a
        for j in range(i + 1):
            v = kinv[i + 1, j + 1] - bi * kinv[0, j + 1]
            out[i, j] = v
            out[j, i] = v
    return out


def upsize_np(kbar_inv, kvec, schur_inv):
    u = kbar_inv @ kvec
    s = kbar_inv.shape[0]
    out = np.empty((s + 1, s + 1))
    out[:s, :s] = kbar_inv + schur_inv * np.outer(u, u)
    out[:s, s] = -schur_inv * u
    out[s, :s] = -schur_inv * u
    out[s, s] = schur_inv
    return out


@njit
def upsize_nb(kbar_inv, kvec, schur_inv):
    s = kbar_inv.shape[0]
    u = np.zeros(s)
    for i in range(s):
        acc = 0.0
        for j in range(s):
            acc += kbar_inv[i, j] * kvec[j]
        u[i] = acc
    out = np.empty((s + 1, s + 1))
    for i in range(s):
        for j in range(i + 1):
            v = kbar_inv[i, j] + schur_inv * u[i] * u[j]
            out[i, j] = v
            out[j, i] = v
        out[i, s] = -schur_inv * u[i]
        out[s, i] = -schur_inv * u[i]
    out[s, s] = schur_inv
    return out


# ---------------------------------------------------------------------------
# grid lookup and detection


def nearest_index_np(values, grid):
    """Index of the nearest ascending ``grid`` point; ties go to the lower index."""
    if grid.shape[0] == 1:
        return np.zeros(values.shape[0], dtype=np.int64)
    pos = np.clip(np.searchsorted(grid, values, side="left"), 1, grid.shape[0] - 1)
    left = grid[pos - 1]
    right = grid[pos]
    take_right = (right - values) < (values - left)
    return np.where(take_right, pos, pos - 1)


@njit
def nearest_index_nb(values, grid):
    n = values.shape[0]
    s = grid.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        v = values[i]
        best = 0
        bd = abs(v - grid[0])
        for j in range(1, s):
            dj = abs(v - grid[j])
            if dj < bd:
                bd = dj
                best = j
        out[i] = best
    return out


def min_metric_np(y, cand):
    """argmin_m sum_l (y[n, l] - cand[m, l])^2, lowest index on ties."""
    metric = ((y[:, None, :] - cand[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(metric, axis=1)


@njit
def min_metric_nb(y, cand):
    n, nl = y.shape
    nm = cand.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        best = 0
        bm = np.inf
        for m in range(nm):
            acc = 0.0
            for l in range(nl):
                t = y[i, l] - cand[m, l]
                acc += t * t
            if acc < bm:
                bm = acc
                best = m
        out[i] = best
    return out


if USE_NUMBA:
    sqdist = sqdist_nb
    se_gram = se_gram_nb
    scaled_gram_stack = scaled_gram_stack_nb
    chol_terms = chol_terms_nb
    downsize = downsize_nb
    upsize = upsize_nb
    nearest_index = nearest_index_nb
    min_metric = min_metric_nb
else:
    sqdist = sqdist_np
    se_gram = se_gram_np
    scaled_gram_stack = scaled_gram_stack_np
    chol_terms = chol_terms_np
    downsize = downsize_np
    upsize = upsize_np
    nearest_index = nearest_index_np
    min_metric = min_metric_np

BACKEND = "numba" if USE_NUMBA else "numpy"
