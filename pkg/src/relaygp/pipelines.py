"""Online estimation regimes: full information, frame-by-frame, sliding window.

Every regime turns a :class:`~relaygp.relay_sim.FrameBatch` into zero-forced
training data for one relay (inputs ``s * h_used``, targets ``y / g_used``,
noise ``sigma_v2 / g_used^2``), runs ICM, and reports the estimate on a grid
with one point per constellation symbol.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import CapacityError, DegeneracyError, ParameterDomainError
from .gp_core import HyperPriors, TrainingSet, gp_predict
from .icm import IcmConfig
from .kernel_algebra import JITTER_START, downsize_inverse, gram_matrix, upsize_inverse
from .relay_sim import PERFECT, zf_inputs

log = logging.getLogger(__name__)

FULL = "full"
FRAME = "frame"
SLIDING = "sliding"
APPROACHES = (FULL, SLIDING, FRAME)

DEFAULT_CAP = 4096


@dataclass
class GridAggregate:
    grid: np.ndarray
    m: np.ndarray
    Phi: np.ndarray
    count: int = 0
    point_counts: np.ndarray = None

    @classmethod
    def empty(cls, grid):
        S = grid.shape[0]
        return cls(grid, np.zeros(S), np.zeros((S, S)), 0, np.zeros(S, dtype=int))

    @property
    def mask(self):
        return self.point_counts > 0

    def update(self, f_tilde, covered):
        """Fold one grid vector into the running mean / covariance.

        Points not covered this round keep their mean and contribute a zero
        deviation to the covariance update.
        """
        self.count += 1
        self.point_counts = self.point_counts + covered
        m = self.m.copy()
        c = self.point_counts[covered]
        m[covered] += (f_tilde[covered] - m[covered]) / c
        dev = np.where(covered, f_tilde - m, 0.0)
        t = self.count
        self.Phi = self.Phi + (np.outer(dev, dev) - self.Phi) / t
        self.m = m


@dataclass
class RelayEstimate:
    f_map: np.ndarray
    inputs: np.ndarray
    hp: object
    aggregate: GridAggregate
    approach: str
    csi_mode: str
    traces: list = field(default_factory=list)
    train: TrainingSet = None
    priors: HyperPriors = None
    stats: dict = field(default_factory=dict)

    def predict_grid(self):
        """GP predictive mean/variance on the grid from the last training set."""
        return gp_predict(self.train, self.hp, self.priors, self.aggregate.grid)


def quantize_to_grid(inputs, values, grid):
    """Average ``values`` onto the nearest ascending ``grid`` points.

    Returns (per-point means, coverage mask); uncovered points hold 0.
    """
    inputs = np.ascontiguousarray(inputs, dtype=float)
    values = np.asarray(values, dtype=float)
    grid = np.ascontiguousarray(grid, dtype=float)
    idx = kernels.nearest_index(inputs, grid)
    S = grid.shape[0]
    counts = np.bincount(idx, minlength=S)
    sums = np.bincount(idx, weights=values, minlength=S)
    mask = counts > 0
    out = np.zeros(S)
    out[mask] = sums[mask] / counts[mask]
    return out, mask


def symbol_grid(constellation, h_used, size=None):
    """One point per symbol at ``s_m * h_used``, or ``size`` uniform points over their hull."""
    pts = constellation.points * float(h_used)
    if size is None or size == constellation.M:
        return pts
    if size < 2:
        raise ParameterDomainError(f"grid size must be >= 2, got {size}")
    return np.linspace(pts.min(), pts.max(), int(size))


def _relay_setup(batch, relay_index, csi_mode, priors, grid_size=None):
    ch = batch.channels[relay_index]
    h_used, g_used = ch.used(csi_mode)
    inputs = zf_inputs(batch.s, h_used)  # T x K
    targets = batch.y[relay_index] / g_used
    pri = priors.with_noise(batch.sigma_v2 / g_used ** 2)
    grid = symbol_grid(batch.constellation, h_used, grid_size)
    return inputs, targets, pri, grid


def approach_full(
    batch, relay_index, priors, icm=None, csi_mode=PERFECT, cap=DEFAULT_CAP, grid_size=None,
):
    """One ICM run over all K*T stacked pilots."""
    icm = icm or IcmConfig()
    inputs, targets, pri, grid = _relay_setup(batch, relay_index, csi_mode, priors, grid_size)
    n = inputs.size
    if n > cap:
        raise CapacityError(f"full-information problem has {n} points, cap is {cap}")
    train = TrainingSet(inputs.ravel(), targets.ravel())
    res = icm.run(train, pri)
    agg = GridAggregate.empty(grid)
    f_tilde, mask = quantize_to_grid(train.inputs, res.f_map, grid)
    agg.update(f_tilde, mask)
    agg.count = batch.T
    _, var = gp_predict(train, res.hp, pri, grid)
    agg.Phi = np.diag(np.where(mask, var, 0.0))
    return RelayEstimate(
        res.f_map, train.inputs, res.hp, agg, FULL, csi_mode, [res.trace], train, pri,
        {"icm_runs": 1, "iterations": res.iterations_run},
    )


def approach_frame_by_frame(
    batch, relay_index, priors, icm=None, csi_mode=PERFECT, grid_size=None,
):
    """Independent ICM per frame, warm-started, averaged on the grid."""
    icm = icm or IcmConfig()
    inputs, targets, pri, grid = _relay_setup(batch, relay_index, csi_mode, priors, grid_size)
    agg = GridAggregate.empty(grid)
    hp = icm.init
    traces = []
    iters = 0
    res = train = None
    for t in range(batch.T):
        train = TrainingSet(inputs[t], targets[t])
        res = icm.run(train, pri, init=hp)
        hp = res.hp
        iters += res.iterations_run
        traces.append(res.trace)
        f_tilde, mask = quantize_to_grid(train.inputs, res.f_map, grid)
        agg.update(f_tilde, mask)
    return RelayEstimate(
        res.f_map, train.inputs, hp, agg, FRAME, csi_mode, traces, train, pri,
        {"icm_runs": batch.T, "iterations": iters},
    )


class SlidingGram:
    """Inverse of ``K + reg I`` over the last ``size`` inputs, updated by bordering.

    Each :meth:`push` drops the oldest input (when full) and appends the new
    one in O(size^2).  A degenerate pivot or Schur complement triggers a
    rebuild from scratch with ten times the regularization.
    """

    def __init__(self, inputs, d, reg, size):
        self.size = int(size)
        self.d = float(d)
        self.reg = float(reg)
        self.rebuilds = 0
        self._rebuild(np.asarray(inputs, dtype=float)[-self.size:])
        self.rebuilds = 0

    def _rebuild(self, inputs):
        state = gram_matrix(inputs, self.d, jitter=self.reg)
        self.reg = state.jitter
        self.inputs = state.inputs.copy()
        self.K_inv = state.K_inv
        self.rebuilds += 1

    def push(self, x):
        x = float(x)
        try:
            kinv = self.K_inv
            keep = self.inputs
            if keep.shape[0] >= self.size:
                kinv = downsize_inverse(kinv) if keep.shape[0] > 1 else np.zeros((0, 0))
                keep = keep[1:]
            if keep.shape[0] == 0:
                self.K_inv = np.array([[1.0 / (1.0 + self.reg)]])
            else:
                kvec = kernels.se_gram(keep, np.array([x]), self.d)[:, 0]
                self.K_inv = upsize_inverse(kinv, kvec, 1.0 + self.reg)
            self.inputs = np.append(keep, x)
        except DegeneracyError:
            log.warning("sliding-window inverse degenerate; rebuilding with more regularization")
            self.reg *= 10.0
            self._rebuild(np.append(self.inputs, x)[-self.size:])

    def set_d(self, d):
        if float(d) != self.d:
            self.d = float(d)
            self._rebuild(self.inputs)

    def direct_inverse(self):
        return gram_matrix(self.inputs, self.d, jitter=self.reg).K_inv


def window_positions(n_symbols, window, overlap_frac):
    """End indices (exclusive) of each window over a stream of ``n_symbols``."""
    if window < 2:
        raise ParameterDomainError("window must be >= 2")
    if not 0.0 <= overlap_frac < 1.0:
        raise ParameterDomainError("overlap_frac must be in [0, 1)")
    stride = max(1, int(round(window * (1.0 - overlap_frac))))
    return list(range(window, n_symbols + 1, stride)), stride


def approach_sliding(
    batch, relay_index, priors, icm=None, csi_mode=PERFECT, window=None, overlap_frac=0.5,
    check_inverse=False, grid_size=None,
):
    """ICM over a window of the last ``window`` pilots, advanced symbol by symbol.

    The window keeps ``(K + (jitter + s2) I)^{-1}`` current via bordered
    updates; ICM runs at every stride boundary and its first f-update uses
    that inverse directly.
    """
    icm = icm or IcmConfig()
    window = window or batch.K
    inputs, targets, pri, grid = _relay_setup(batch, relay_index, csi_mode, priors, grid_size)
    xs = inputs.ravel()
    ys = targets.ravel()
    ends, stride = window_positions(xs.size, window, overlap_frac)
    if not ends:
        raise ParameterDomainError(f"window {window} longer than the {xs.size}-symbol stream")
    agg = GridAggregate.empty(grid)
    hp = icm.init
    reg = JITTER_START + pri.noise_var_v
    sg = SlidingGram(xs[:window], hp.d, reg, window)
    pos = window
    traces = []
    iters = 0
    max_err = 0.0
    res = train = None
    for end in ends:
        while pos < end:
            sg.push(xs[pos])
            pos += 1
        if check_inverse:
            max_err = max(max_err, float(np.max(np.abs(sg.K_inv - sg.direct_inverse()))))
        train = TrainingSet(xs[end - window:end], ys[end - window:end])
        exact = sg.reg == reg and sg.d == hp.d
        res = icm.run(train, pri, init=hp, noisy_inv=sg.K_inv if exact else None)
        hp = res.hp
        iters += res.iterations_run
        traces.append(res.trace)
        f_tilde, mask = quantize_to_grid(train.inputs, res.f_map, grid)
        agg.update(f_tilde, mask)
        sg.set_d(hp.d)
    stats = {
        "icm_runs": len(ends), "iterations": iters, "stride": stride,
        "rebuilds": sg.rebuilds, "max_inverse_error": max_err,
    }
    return RelayEstimate(
        res.f_map, train.inputs, hp, agg, SLIDING, csi_mode, traces, train, pri, stats,
    )


def estimate(approach, batch, relay_index, priors, icm=None, csi_mode=PERFECT, **kw):
    """Dispatch to one of the three regimes; ``kw`` goes to that regime."""
    if approach == FULL:
        return approach_full(batch, relay_index, priors, icm, csi_mode, **kw)
    if approach == FRAME:
        return approach_frame_by_frame(batch, relay_index, priors, icm, csi_mode, **kw)
    if approach == SLIDING:
        return approach_sliding(batch, relay_index, priors, icm, csi_mode, **kw)
    raise ParameterDomainError(f"unknown approach {approach!r}")
