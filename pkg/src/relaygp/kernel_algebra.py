"""Squared-exponential Gram algebra.

Two representations of the same matrix ``K(d) + shift * I`` live here:

* :class:`GramState` -- the dense matrix and its dense inverse.  This is what
  the sliding-window pipeline maintains through the bordered-inverse updates
  :func:`downsize_inverse` / :func:`upsize_inverse`.
* :class:`GroupedGram` -- a factorization through the *distinct* input values.
  Zero-forced relay inputs take at most one value per constellation point, so
  a Gram over ``K*t`` stacked inputs has rank at most ``M``.  Writing
  ``K = P Ku P^T`` with ``P`` the n x m group-indicator matrix and
  ``N = P^T P = diag(counts)`` gives, for any ``x = P a + z`` with ``P^T z = 0``::

      (K + c I)^{-1} x = P N^{-1/2} A^{-1} N^{1/2} a + z / c
      log|K + c I|     = log|A| + (n - m) log c
      A                = N^{1/2} Ku N^{1/2} + c I

  which is exact and costs O(m^3 + n) instead of O(n^3).
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import kernels
from .errors import DegeneracyError, ParameterDomainError, SingularityError

JITTER_START = 1e-8
JITTER_MAX = 1e-2
JITTER_FACTOR = 10.0


def _check_d(d):
    if not np.isfinite(d) or d <= 0:
        raise ParameterDomainError(f"length-scale must be positive, got {d!r}")


def se_kernel(x, y, d):
    """exp(-(x - y)^2 / (2 d^2))."""
    _check_d(d)
    t = float(x) - float(y)
    return float(np.exp(-(t * t) / (2.0 * d * d)))


def sq_dist_matrix(inputs):
    """Matrix of squared pairwise distances (symmetric, zero diagonal)."""
    x = np.ascontiguousarray(inputs, dtype=float)
    return kernels.sqdist(x, x)


def _jitter_ladder(start):
    """start, then start*10, ... up to JITTER_MAX (a zero start continues from 1e-8)."""
    yield float(start)
    j = JITTER_START if start <= 0 else start * JITTER_FACTOR
    while j <= JITTER_MAX * (1 + 1e-12):
        yield j
        j *= JITTER_FACTOR


@dataclass
class GramState:
    """Dense SE Gram matrix over ``inputs`` and the inverse of ``K + jitter*I``.

    ``K`` has unit diagonal; the jitter is only applied to the inverted matrix.
    """

    inputs: np.ndarray
    K: np.ndarray
    K_inv: np.ndarray
    jitter: float
    d: float

    @property
    def n(self):
        return self.inputs.shape[0]

    def residual(self):
        """max |(K + jitter I) K_inv - I|."""
        A = self.K + self.jitter * np.eye(self.n)
        return float(np.max(np.abs(A @ self.K_inv - np.eye(self.n))))


def gram_matrix(inputs, d, jitter=JITTER_START):
    """Build a :class:`GramState` with bounded jitter escalation.

    The first attempt uses ``jitter`` as given (0 is allowed).  On a failed
    Cholesky factorization the jitter is raised by factors of 10 starting at
    1e-8, up to 1e-2; after that :class:`SingularityError` is raised.
    """
    _check_d(d)
    x = np.ascontiguousarray(inputs, dtype=float)
    if x.ndim != 1 or x.shape[0] < 1:
        raise ParameterDomainError("gram_matrix needs a non-empty 1-D input vector")
    if not np.all(np.isfinite(x)):
        raise ParameterDomainError("gram_matrix inputs must be finite")
    K = kernels.se_gram(x, x, float(d))
    eye = np.eye(x.shape[0])
    last = jitter
    for j in _jitter_ladder(jitter):
        last = j
        try:
            cf = sla.cho_factor(K + j * eye, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            continue
        K_inv = sla.cho_solve(cf, eye, check_finite=False)
        K_inv = 0.5 * (K_inv + K_inv.T)
        return GramState(x, K, K_inv, float(j), float(d))
    raise SingularityError(f"Gram matrix not SPD up to jitter {last:g}", jitter=last)


def gram_derivative(state, sq):
    """Elementwise derivative of the Gram matrix with respect to ``d``.

    For exp(-r^2 / (2 d^2)) this is ``(sq / d^3) * K``.
    """
    sq = np.asarray(sq, dtype=float)
    if sq.shape != state.K.shape:
        raise ParameterDomainError(
            f"distance matrix shape {sq.shape} does not match Gram {state.K.shape}"
        )
    return sq * state.K / state.d ** 3


def downsize_inverse(K_inv, tol=1e-14):
    """Inverse of a matrix with its first row and column removed, from its inverse."""
    K_inv = np.ascontiguousarray(K_inv, dtype=float)
    if K_inv.ndim != 2 or K_inv.shape[0] != K_inv.shape[1] or K_inv.shape[0] < 2:
        raise ParameterDomainError("downsize_inverse needs a square matrix with n >= 2")
    if not K_inv[0, 0] > tol:
        raise DegeneracyError(f"leading inverse pivot {K_inv[0, 0]:g} below {tol:g}")
    return kernels.downsize(K_inv)


def upsize_inverse(Kbar_inv, k_vec, k_self, tol=1e-12):
    """Inverse of ``[[Kbar, k_vec], [k_vec^T, k_self]]`` given ``Kbar^{-1}``.

    Raises :class:`DegeneracyError` when the Schur complement
    ``k_self - k_vec^T Kbar^{-1} k_vec`` is not above ``tol``.
    """
    Kbar_inv = np.ascontiguousarray(Kbar_inv, dtype=float)
    k_vec = np.ascontiguousarray(k_vec, dtype=float)
    schur = float(k_self) - float(k_vec @ Kbar_inv @ k_vec)
    if not schur > tol:
        raise DegeneracyError(f"Schur complement {schur:g} not above {tol:g}")
    return kernels.upsize(Kbar_inv, k_vec, 1.0 / schur)


# ---------------------------------------------------------------------------
# grouped representation


@dataclass(frozen=True)
class InputGroups:
    """Distinct values of an input vector and the map back to positions."""

    uniq: np.ndarray
    inverse: np.ndarray
    counts: np.ndarray
    sq: np.ndarray = field(repr=False)

    @classmethod
    def from_inputs(cls, inputs):
        x = np.asarray(inputs, dtype=float)
        uniq, inverse, counts = np.unique(x, return_inverse=True, return_counts=True)
        uniq = np.ascontiguousarray(uniq)
        return cls(uniq, inverse.ravel(), counts.astype(float), kernels.sqdist(uniq, uniq))

    @property
    def n(self):
        return self.inverse.shape[0]

    @property
    def m(self):
        return self.uniq.shape[0]

    @property
    def weights(self):
        return np.sqrt(self.counts)

    def split(self, x):
        """Return (group means a, residual z) with ``x = a[inverse] + z``."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            a = np.bincount(self.inverse, weights=x, minlength=self.m) / self.counts
        else:
            a = np.stack(
                [np.bincount(self.inverse, weights=col, minlength=self.m) for col in x.T],
                axis=1,
            ) / self.counts[:, None]
        return a, x - a[self.inverse]


def _batched_cholesky(stack):
    """Cholesky of every matrix in the stack; None in place of failures."""
    try:
        return list(np.linalg.cholesky(stack)), True
    except np.linalg.LinAlgError:
        out = []
        for A in stack:
            try:
                out.append(np.linalg.cholesky(A))
            except np.linalg.LinAlgError:
                out.append(None)
        return out, False


def factor_groups(groups, ds, extra=0.0):
    """Cholesky factors of ``A(d) = W Ku(d) W + (jitter + extra) I`` for each ``d``.

    The jitter for each ``d`` follows the escalation ladder of
    :func:`gram_matrix`, applied to the prior part only, so a noisy factor
    (``extra > 0``) shares the jitter its noiseless counterpart would get.
    Returns (list of lower factors, array of jitters).
    """
    ds = np.atleast_1d(np.asarray(ds, dtype=float))
    w = groups.weights
    jit = np.full(ds.shape[0], JITTER_START)
    chols = [None] * ds.shape[0]
    pending = np.arange(ds.shape[0])
    j = JITTER_START
    while pending.size:
        if j > JITTER_MAX * (1 + 1e-12):
            raise SingularityError(
                f"grouped Gram not SPD up to jitter {j / JITTER_FACTOR:g}",
                jitter=j / JITTER_FACTOR,
            )
        if extra == 0.0:
            stack = kernels.scaled_gram_stack(groups.sq, w, ds[pending], j)
            got, _ = _batched_cholesky(stack)
            failed = []
            for idx, L in zip(pending, got):
                if L is None:
                    failed.append(idx)
                else:
                    chols[idx] = L
                    jit[idx] = j
            pending = np.asarray(failed, dtype=int)
        else:
            # noise only needs the jitter the prior factor would have used
            base = factor_groups(groups, ds[pending], 0.0)[1]
            stack = kernels.scaled_gram_stack(groups.sq, w, ds[pending], 0.0)
            idx_m = np.arange(groups.m)
            stack[:, idx_m, idx_m] += (base + extra)[:, None]
            got, _ = _batched_cholesky(stack)
            for idx, L, b in zip(pending, got, base):
                if L is None:
                    raise SingularityError("noisy grouped Gram not SPD", jitter=b)
                chols[idx] = L
                jit[idx] = b
            pending = np.asarray([], dtype=int)
        j *= JITTER_FACTOR
    return chols, jit


def _ladder_terms(groups, b, ds):
    """Prior-only terms with per-d jitter escalation; returns (logdet, quad, jitter)."""
    nd = ds.shape[0]
    logdet = np.empty(nd)
    quad = np.empty(nd)
    jit = np.empty(nd)
    pending = np.arange(nd)
    j = JITTER_START
    while pending.size:
        if j > JITTER_MAX * (1 + 1e-12):
            last = j / JITTER_FACTOR
            raise SingularityError(f"grouped Gram not SPD up to jitter {last:g}", jitter=last)
        ld, q, ok = kernels.chol_terms(
            groups.sq, groups.weights, b, ds[pending], np.full(pending.size, j)
        )
        done = pending[ok]
        logdet[done], quad[done], jit[done] = ld[ok], q[ok], j
        pending = pending[~ok]
        j *= JITTER_FACTOR
    return logdet, quad, jit


def projected(groups, x):
    """(w * group means, squared norm of the within-group residual) of ``x``."""
    a, z = groups.split(x)
    return np.ascontiguousarray(groups.weights * a), float(z @ z)


def terms_from_projection(groups, b, zz, ds, extra=0.0):
    """:func:`gaussian_terms` on a vector already reduced by :func:`projected`."""
    ds = np.ascontiguousarray(np.atleast_1d(np.asarray(ds, dtype=float)))
    logdet, quad, jit = _ladder_terms(groups, b, ds)
    if extra != 0.0:
        logdet, quad, ok = kernels.chol_terms(groups.sq, groups.weights, b, ds, jit + extra)
        if not ok.all():
            raise SingularityError("noisy grouped Gram not SPD", jitter=float(jit[~ok][0]))
    shift = jit + extra
    quad = quad + zz / shift
    logdet = logdet + (groups.n - groups.m) * np.log(shift)
    return logdet, quad, jit


def gaussian_terms(groups, x, ds, extra=0.0):
    """``log|C(d)|`` and ``x^T C(d)^{-1} x`` for ``C(d) = K(d) + (jitter+extra) I``.

    Vectorized over the length-scales ``ds``; the jitter for each ``d`` is the
    one the noiseless matrix needs (see :func:`factor_groups`).  Returns
    (logdet, quad, jitter).
    """
    b, zz = projected(groups, x)
    return terms_from_projection(groups, b, zz, ds, extra)


class GroupedGram:
    """``K(d) + (jitter + extra) I`` factored through distinct inputs."""

    def __init__(self, groups, d, extra=0.0):
        _check_d(d)
        chols, jit = factor_groups(groups, [d], extra)
        self.groups = groups
        self.d = float(d)
        self.jitter = float(jit[0])
        self.extra = float(extra)
        self.shift = self.jitter + self.extra
        self.L = chols[0]

    @classmethod
    def from_inputs(cls, inputs, d, extra=0.0):
        return cls(InputGroups.from_inputs(inputs), d, extra)

    def with_noise(self, noise_var):
        """Same prior jitter, plus ``noise_var`` on the diagonal."""
        return GroupedGram(self.groups, self.d, noise_var)

    def _half(self, b):
        return sla.solve_triangular(self.L, b, lower=True, check_finite=False)

    def solve(self, x):
        g = self.groups
        a, z = g.split(x)
        w = g.weights if np.ndim(x) == 1 else g.weights[:, None]
        u = sla.cho_solve((self.L, True), w * a, check_finite=False) / w
        return u[g.inverse] + z / self.shift

    def logdet(self):
        g = self.groups
        return float(2.0 * np.log(np.diag(self.L)).sum() + (g.n - g.m) * np.log(self.shift))

    def quad(self, x):
        a, z = self.groups.split(x)
        h = self._half(self.groups.weights * a)
        return float(h @ h + z @ z / self.shift)

    def dense(self):
        """The represented n x n matrix (for checks on small problems)."""
        g = self.groups
        Ku = np.exp(-g.sq / (2.0 * self.d ** 2))
        return Ku[np.ix_(g.inverse, g.inverse)] + self.shift * np.eye(g.n)
