"""GP prior with linear mean and SE covariance, prediction, and the joint log-posterior."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterDomainError
from .kernel_algebra import GroupedGram, InputGroups, gaussian_terms, gram_matrix
from . import kernels

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class HyperParams:
    theta1: float = 0.0
    theta2: float = 1.0
    d: float = 1.0

    @property
    def theta(self):
        return np.array([self.theta1, self.theta2])


@dataclass(frozen=True)
class HyperPriors:
    """Prior structure: N(0, diag(sigma_theta)) on theta, U(d_lo, d_hi) on d.

    ``noise_var_v`` is the observation noise variance the estimator assumes
    for the targets it is given (after any channel compensation).
    """

    sigma_theta: tuple = (1.0, 100.0)
    d_bounds: tuple = (0.0, 10.0)
    noise_var_v: float = 0.1

    def __post_init__(self):
        if len(self.sigma_theta) != 2 or min(self.sigma_theta) <= 0:
            raise ParameterDomainError("sigma_theta needs two positive variances")
        lo, hi = self.d_bounds
        if not lo < hi:
            raise ParameterDomainError(f"d_bounds must satisfy lo < hi, got {self.d_bounds}")
        if self.noise_var_v < 0:
            raise ParameterDomainError("noise_var_v must be >= 0")

    @property
    def sigma_theta_inv(self):
        return np.diag(1.0 / np.asarray(self.sigma_theta, dtype=float))

    def with_noise(self, noise_var_v):
        return HyperPriors(self.sigma_theta, self.d_bounds, float(noise_var_v))


@dataclass(frozen=True)
class TrainingSet:
    inputs: np.ndarray
    targets: np.ndarray
    groups: InputGroups = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        x = np.ascontiguousarray(self.inputs, dtype=float).ravel()
        y = np.ascontiguousarray(self.targets, dtype=float).ravel()
        if x.shape != y.shape or x.shape[0] < 1:
            raise ParameterDomainError(
                f"inputs/targets must be equal-length and non-empty, got {x.shape} / {y.shape}"
            )
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)
        if self.groups is None:
            object.__setattr__(self, "groups", InputGroups.from_inputs(x))

    @property
    def n(self):
        return self.inputs.shape[0]


def mean_vector(hp, inputs):
    return hp.theta1 + hp.theta2 * np.asarray(inputs, dtype=float)


def design_matrix(inputs):
    x = np.asarray(inputs, dtype=float)
    return np.column_stack([np.ones_like(x), x])


def gp_predict(train, hp, priors, query, jitter=None):
    """Predictive mean and variance of f at ``query`` (scalar or array).

    mean = mu(q) + k_q^T (K + (jitter + s2) I)^{-1} (y - mu(x)),
    var  = 1 - k_q^T (K + (jitter + s2) I)^{-1} k_q, clamped at 0.

    By default the prior jitter follows the escalation used by the ICM
    estimator.  An explicit ``jitter`` (0 allowed) factors the dense matrix
    instead; ``jitter=0`` with zero noise is the noiseless interpolator.
    """
    q = np.atleast_1d(np.asarray(query, dtype=float))
    scalar = np.ndim(query) == 0
    noise = priors.noise_var_v
    if jitter is None:
        prior = GroupedGram(train.groups, hp.d)
        C = prior.with_noise(noise) if noise > 0 else prior
    else:
        C = _DenseSolver(gram_matrix(train.inputs, hp.d, jitter=jitter + noise).K_inv)
    kq = kernels.se_gram(np.ascontiguousarray(train.inputs), q, float(hp.d))
    resid = train.targets - mean_vector(hp, train.inputs)
    mean = mean_vector(hp, q) + kq.T @ C.solve(resid)
    var = 1.0 - np.einsum("ij,ij->j", kq, C.solve(kq))
    var = np.clip(var, 0.0, 1.0)
    if scalar:
        return float(mean[0]), float(var[0])
    return mean, var


class _DenseSolver:
    def __init__(self, inv):
        self.inv = inv

    def solve(self, x):
        return self.inv @ x


def log_uniform(d, bounds):
    lo, hi = bounds
    if lo < d < hi:
        return -float(np.log(hi - lo))
    return -np.inf


def log_prior_theta(hp, priors):
    s = np.asarray(priors.sigma_theta, dtype=float)
    th = hp.theta
    return float(-0.5 * (2 * LOG_2PI + np.log(s).sum() + (th * th / s).sum()))


def log_likelihood(f, train, noise_var):
    if noise_var <= 0:
        raise ParameterDomainError("log-likelihood needs a positive noise variance")
    r = train.targets - np.asarray(f, dtype=float)
    n = train.n
    return float(-0.5 * (n * (LOG_2PI + np.log(noise_var)) + r @ r / noise_var))


def log_prior_f(f, hp, train):
    """log N(f; mu(x), K(d) + jitter I) through the grouped factorization."""
    resid = np.asarray(f, dtype=float) - mean_vector(hp, train.inputs)
    logdet, quad, _ = gaussian_terms(train.groups, resid, [hp.d])
    return float(-0.5 * (train.n * LOG_2PI + logdet[0] + quad[0]))


def log_joint_posterior(f, hp, train, priors):
    """Log joint posterior of (f, theta, d) given the targets, with all constants.

    Returns ``-inf`` when ``d`` is outside the uniform prior support.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != train.targets.shape:
        raise ParameterDomainError(f"f has shape {f.shape}, expected {train.targets.shape}")
    lu = log_uniform(hp.d, priors.d_bounds)
    if not np.isfinite(lu):
        return -np.inf
    return (
        log_likelihood(f, train, priors.noise_var_v)
        + log_prior_f(f, hp, train)
        + log_prior_theta(hp, priors)
        + lu
    )
