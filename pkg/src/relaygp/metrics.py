"""Estimation-error metrics and maximum-likelihood symbol detection."""

import numpy as np

from . import kernels
from .errors import ParameterDomainError
from .pipelines import GridAggregate, RelayEstimate
from .relay_sim import RelayFunctionSpec, apply_relay_function


def _covered(est, grid, mask):
    est = np.asarray(est, dtype=float)
    grid = np.asarray(grid, dtype=float)
    mask = np.ones(est.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ParameterDomainError("no covered grid points")
    return est[mask], grid[mask]


def mean_abs_error(est, truth_fn, grid, mask=None, h_true=1.0):
    """Mean over covered grid points of |est - f(grid)|."""
    e, g = _covered(est, grid, mask)
    return float(np.mean(np.abs(e - apply_relay_function(truth_fn, g, h_true))))


def relative_total_error(est, truth_fn, grid, mask=None, h_true=1.0):
    """sum |est - f(grid)| / sum |f(grid)| over covered grid points."""
    e, g = _covered(est, grid, mask)
    truth = apply_relay_function(truth_fn, g, h_true)
    denom = float(np.sum(np.abs(truth)))
    if denom == 0.0:
        raise ParameterDomainError("relative error undefined: truth is zero on the covered grid")
    return float(np.sum(np.abs(e - truth)) / denom)


def grid_estimate(estimate):
    """Aggregate mean on the grid, with GP predictions filling uncovered points."""
    agg = estimate.aggregate
    vals = agg.m.copy()
    if not agg.mask.all():
        mean, _ = estimate.predict_grid()
        vals[~agg.mask] = mean[~agg.mask]
    return vals


def candidate_values(f_est, constellation, h_used, h_true=None):
    """f evaluated at every ``s_m * h_used``.

    ``f_est`` is a :class:`RelayFunctionSpec` (genie; ``h_true`` defaults to
    ``h_used``), a :class:`RelayEstimate`, a :class:`GridAggregate`, or a
    ``(grid, values)`` pair, the last three read by nearest-grid lookup.
    """
    x = np.ascontiguousarray(constellation.points * float(h_used))
    if isinstance(f_est, RelayFunctionSpec):
        return np.asarray(apply_relay_function(f_est, x, h_used if h_true is None else h_true))
    if isinstance(f_est, RelayEstimate):
        grid, vals = f_est.aggregate.grid, grid_estimate(f_est)
    elif isinstance(f_est, GridAggregate):
        grid, vals = f_est.grid, f_est.m
    else:
        grid, vals = f_est
    grid = np.ascontiguousarray(grid, dtype=float)
    return np.asarray(vals)[kernels.nearest_index(x, grid)]


def ml_detect(y, f_est, h_used, g_used, constellation, sigma_v2=1.0, h_true=None):
    """Index of the constellation point minimizing the squared distance to ``y``.

    Single relay: scalars / one estimate and ``y`` of shape (n,).  Several
    relays: sequences of equal length L and ``y`` of shape (n, L); metrics
    are summed across relays, each scaled by its ``sigma_v2``.  Ties resolve
    to the lower index.  Returns an int for scalar ``y``.
    """
    multi = isinstance(h_used, (list, tuple, np.ndarray))
    if not multi:
        f_est, h_used, g_used, sigma_v2 = [f_est], [h_used], [g_used], [sigma_v2]
        h_true = [h_true]
    elif h_true is None:
        h_true = [None] * len(h_used)
    sig = np.broadcast_to(np.asarray(sigma_v2, dtype=float), (len(h_used),))
    scale = 1.0 / np.sqrt(np.where(sig > 0, sig, 1.0))
    cand = np.column_stack(
        [
            candidate_values(f, constellation, h, ht) * g * s
            for f, h, g, ht, s in zip(f_est, h_used, g_used, h_true, scale)
        ]
    )
    y_arr = np.asarray(y, dtype=float)
    scalar = y_arr.ndim == 0
    y2 = y_arr.reshape(-1, 1) if not multi else np.atleast_2d(y_arr)
    idx = kernels.min_metric(np.ascontiguousarray(y2 * scale), np.ascontiguousarray(cand))
    return int(idx[0]) if scalar else idx


def bit_errors(constellation, sent_idx, detected_idx):
    """Number of differing Gray-label bits."""
    diff = constellation.labels[np.asarray(sent_idx)] ^ constellation.labels[np.asarray(detected_idx)]
    return int(_popcount(diff).sum())


def _popcount(arr):
    arr = np.asarray(arr, dtype=np.int64)
    out = np.zeros(arr.shape, dtype=np.int64)
    while np.any(arr):
        out += arr & 1
        arr = arr >> 1
    return out
