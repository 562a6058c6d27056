"""Iterated conditional modes for (f, theta, d) under the zero-forced GP model.

Each sweep maximizes the three full conditionals in turn:

* f     -- Gaussian conditional, mode ``y - s2 (C + s2 I)^{-1} (y - mu)``
* theta -- 2 x 2 normal equations ``(X^T C^-1 X + Sigma^-1) theta = X^T C^-1 f``
* d     -- 1-D numerical maximization of ``-1/2 log|C(d)| - 1/2 r^T C(d)^-1 r``

so the joint log-posterior never decreases.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegeneracyError, ParameterDomainError, RelayGPError
from .gp_core import (
    HyperParams,
    design_matrix,
    log_joint_posterior,
    mean_vector,
)
from .kernel_algebra import GroupedGram, gaussian_terms, projected, terms_from_projection

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0

@dataclass(frozen=True)
class IcmConfig:
    J: int = 50
    tol: float = 1e-8
    init: HyperParams = field(default_factory=HyperParams)
    d_grid: int = 200
    d_edge: float = 1e-3
    d_xtol: float = 1e-6

    def run(self, train, priors, init=None, **kw):
        return run_icm(
            train, priors, init or self.init, self.J, self.tol,
            d_grid=self.d_grid, d_edge=self.d_edge, d_xtol=self.d_xtol, **kw,
        )


@dataclass
class IcmResult:
    f_map: np.ndarray
    hp: HyperParams
    trace: np.ndarray  # rows: iteration, theta1, theta2, d, log posterior
    iterations_run: int
    converged: bool

    @property
    def log_posterior(self):
        return self.trace[:, 4]


def update_f(train, hp, priors, gram=None, noisy_inv=None):
    """Conditional mode of the function values at the training inputs.

    ``noisy_inv`` may supply a precomputed ``(K + (jitter + s2) I)^{-1}``
    (e.g. one maintained by the sliding window), skipping any factorization.
    """
    s2 = priors.noise_var_v
    y = train.targets
    if s2 == 0.0:
        return y.copy()
    resid = y - mean_vector(hp, train.inputs)
    if noisy_inv is not None:
        return y - s2 * (noisy_inv @ resid)
    if gram is None:
        gram = GroupedGram(train.groups, hp.d)
    return y - s2 * gram.with_noise(s2).solve(resid)


def theta_normal_equations(f, gram, inputs, priors):
    """Matrix and right-hand side of the stationarity system for theta."""
    X = design_matrix(inputs)
    CiX = gram.solve(X)
    A = X.T @ CiX + priors.sigma_theta_inv
    b = CiX.T @ np.asarray(f, dtype=float)
    return A, b


def update_theta(f, gram, inputs, priors):
    A, b = theta_normal_equations(f, gram, inputs, priors)
    if not np.all(np.isfinite(A)) or np.linalg.cond(A) > 1e14:
        raise DegeneracyError("theta normal equations are singular")
    t1, t2 = np.linalg.solve(A, b)
    return float(t1), float(t2)


def _finite(v):
    return -np.inf if np.isnan(v) else v


def d_objective(f, hp, train, ds):
    """``-1/2 log|C(d)| - 1/2 (f - mu)^T C(d)^{-1} (f - mu)`` for each d."""
    resid = np.asarray(f, dtype=float) - mean_vector(hp, train.inputs)
    logdet, quad, _ = gaussian_terms(train.groups, resid, ds)
    return -0.5 * (logdet + quad)


def _golden_max(fun, a, b, xtol):
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > xtol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = fun(d)
    return (c, fc) if fc >= fd else (d, fd)


def update_d(f, hp, train, priors, n_grid=200, edge=1e-3, xtol=1e-6):
    """Conditional mode of the length-scale on the prior support.

    A uniform grid of ``n_grid`` points on ``(lo + edge, hi - edge)`` locates
    the best cell, then golden-section search refines it to ``xtol``.  The
    current ``hp.d`` is kept when nothing found beats it.
    """
    lo, hi = priors.d_bounds
    groups = train.groups
    resid = np.asarray(f, dtype=float) - mean_vector(hp, train.inputs)
    wa, zz = projected(groups, resid)

    def obj(xs):
        logdet, quad, _ = terms_from_projection(groups, wa, zz, xs)
        return -0.5 * (logdet + quad)

    grid = np.linspace(lo + edge, hi - edge, n_grid)
    vals = obj(grid)
    vals = np.where(np.isnan(vals), -np.inf, vals)
    if not np.any(np.isfinite(vals)):
        raise DegeneracyError("length-scale objective is -inf on the whole grid")
    k = int(np.argmax(vals))
    best_d, best_v = grid[k], vals[k]
    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, n_grid - 1)]
    gd, gv = _golden_max(lambda x: _finite(obj([x])[0]), a, b, xtol)
    if gv > best_v:
        best_d, best_v = gd, gv
    if lo < hp.d < hi:
        cur = obj([hp.d])[0]
        if cur >= best_v:
            best_d = hp.d
    return float(best_d)


def _annotate(err, j):
    msg = err.args[0] if err.args else ""
    err.args = (f"ICM iteration {j}: {msg}",) + err.args[1:]
    err.iteration = j
    return err


def run_icm(
    train, priors, init=None, J=50, tol=1e-8, f0=None, noisy_inv=None,
    d_grid=200, d_edge=1e-3, d_xtol=1e-6,
):
    """Cycle f -> theta -> d until ``J`` sweeps or an improvement below ``tol``.

    ``trace`` row 0 holds the starting point (``f0`` defaults to the targets);
    row j the state after sweep j.  ``noisy_inv`` is handed to the first
    f-update only.
    """
    if J < 1:
        raise ParameterDomainError("J must be >= 1")
    hp = init or HyperParams()
    lo, hi = priors.d_bounds
    if not lo < hp.d < hi:
        hp = replace(hp, d=float(np.clip(hp.d, lo + d_edge, hi - d_edge)))
    f = train.targets.copy() if f0 is None else np.asarray(f0, dtype=float).copy()
    lp = log_joint_posterior(f, hp, train, priors)
    rows = [(0, hp.theta1, hp.theta2, hp.d, lp)]
    converged = False
    gram = None
    j = 0
    for j in range(1, J + 1):
        try:
            if gram is None or gram.d != hp.d:
                gram = GroupedGram(train.groups, hp.d)
            f = update_f(train, hp, priors, gram, noisy_inv if j == 1 else None)
            t1, t2 = update_theta(f, gram, train.inputs, priors)
            hp = HyperParams(t1, t2, hp.d)
            d = update_d(f, hp, train, priors, d_grid, d_edge, d_xtol)
            hp = HyperParams(t1, t2, d)
            new_lp = log_joint_posterior(f, hp, train, priors)
        except RelayGPError as err:
            raise _annotate(err, j)
        rows.append((j, t1, t2, d, new_lp))
        improvement = new_lp - lp
        lp = new_lp
        if improvement < tol:
            converged = True
            break
    return IcmResult(f, hp, np.array(rows, dtype=float), j, converged)
