"""Synthetic relay network: PAM constellations, Rayleigh channels, relay functions, frames.

All signals are real baseband.  Randomness always comes from an explicit
``numpy.random.Generator``; :func:`substream` derives independent,
reproducible generators from a master seed and integer keys.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterDomainError
from . import kernels

RAYLEIGH_SCALE = 1.0 / np.sqrt(2.0)  # E[h^2] = 1
MIN_GAIN_ESTIMATE = 0.05

PERFECT = "perfect"
IMPERFECT = "imperfect"
CSI_MODES = (PERFECT, IMPERFECT)


def substream(master_seed, *keys):
    """Generator keyed by (master_seed, *keys); distinct keys give independent streams."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.default_rng(ss)


def gray_code(n):
    return n ^ (n >> 1)


@dataclass(frozen=True)
class Constellation:
    points: np.ndarray
    labels: np.ndarray  # Gray label of each point, in point order

    @property
    def M(self):
        return self.points.shape[0]

    @property
    def bits_per_symbol(self):
        return int(np.log2(self.M))

    def bits(self, idx):
        """(n, bits_per_symbol) array of label bits for symbol indices ``idx``."""
        lab = self.labels[np.asarray(idx)]
        shifts = np.arange(self.bits_per_symbol - 1, -1, -1)
        return (lab[..., None] >> shifts) & 1


def make_pam(M):
    """Unit-average-power M-PAM, ascending amplitudes, Gray labelled."""
    M = int(M)
    if M < 2 or M & (M - 1):
        raise ParameterDomainError(f"M must be a power of two >= 2, got {M}")
    levels = np.arange(-(M - 1), M, 2, dtype=float)
    points = levels / np.sqrt((M * M - 1) / 3.0)
    labels = np.array([gray_code(i) for i in range(M)], dtype=np.int64)
    return Constellation(points, labels)


@dataclass(frozen=True)
class ChannelRealization:
    h: float
    g: float
    h_hat: float
    g_hat: float
    sigma_h2: float = 0.0
    sigma_g2: float = 0.0

    def used(self, csi):
        """(h, g) the receiver works with under the given CSI mode."""
        if csi == PERFECT:
            return self.h, self.g
        if csi == IMPERFECT:
            return self.h_hat, self.g_hat
        raise ParameterDomainError(f"unknown CSI mode {csi!r}")


def draw_channels(rng, L, sigma2, csi=IMPERFECT):
    """Rayleigh gains with unit mean square, plus Gaussian estimates.

    Estimates are ``truth + N(0, sigma2)`` floored at 0.05 in imperfect mode
    and equal to the truth in perfect mode.  Truth is drawn first, so the
    two modes share the same true gains for the same generator state.
    """
    if sigma2 < 0:
        raise ParameterDomainError("sigma2 must be >= 0")
    h = rng.rayleigh(RAYLEIGH_SCALE, size=L)
    g = rng.rayleigh(RAYLEIGH_SCALE, size=L)
    e = rng.standard_normal((2, L)) * np.sqrt(sigma2)
    out = []
    for l in range(L):
        if csi == PERFECT:
            out.append(ChannelRealization(h[l], g[l], h[l], g[l], 0.0, 0.0))
        elif csi == IMPERFECT:
            hh = max(h[l] + e[0, l], MIN_GAIN_ESTIMATE)
            gh = max(g[l] + e[1, l], MIN_GAIN_ESTIMATE)
            out.append(ChannelRealization(h[l], g[l], hh, gh, sigma2, sigma2))
        else:
            raise ParameterDomainError(f"unknown CSI mode {csi!r}")
    return out


# ---------------------------------------------------------------------------
# relay functions

ABS = "abs"
LINEAR = "linear"
TANH = "tanh"
DEMOD = "demod"
RELAY_FUNCTIONS = (ABS, LINEAR, TANH, DEMOD)


@dataclass(frozen=True)
class RelayFunctionSpec:
    variant: str
    a: float = 1.0
    b: float = 0.0
    w: float = 1.0
    phi: float = 0.0
    constellation: Constellation = field(default=None, compare=False)

    def __post_init__(self):
        if self.variant not in RELAY_FUNCTIONS:
            raise ParameterDomainError(f"unknown relay function {self.variant!r}")
        if not all(np.isfinite([self.a, self.b, self.w, self.phi])):
            raise ParameterDomainError("relay function parameters must be finite")
        if self.variant == DEMOD and self.constellation is None:
            raise ParameterDomainError("demod relay needs a constellation")

    @classmethod
    def default(cls, variant, constellation=None):
        if variant == LINEAR:
            return cls(LINEAR, a=1.0, b=0.5)
        if variant == TANH:
            return cls(TANH, a=1.0, w=2.0, phi=0.0)
        if variant == DEMOD:
            return cls(DEMOD, constellation=constellation)
        return cls(variant)


def apply_relay_function(spec, x, h=1.0):
    """Evaluate the relay nonlinearity; ``h`` is the true source-relay gain (demod only)."""
    x = np.asarray(x, dtype=float)
    if spec.variant == ABS:
        out = np.abs(x)
    elif spec.variant == LINEAR:
        out = spec.a * x + spec.b
    elif spec.variant == TANH:
        out = spec.a * np.tanh(spec.w * x + spec.phi)
    else:
        pts = spec.constellation.points
        idx = kernels.nearest_index(np.ascontiguousarray(np.atleast_1d(x) / h), pts)
        out = (h * pts[idx]).reshape(x.shape)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# frames


@dataclass
class FrameBatch:
    """Pilot frames for L relays.

    ``s_idx`` / ``s`` are T x K; ``r`` and ``y`` are L x T x K.
    """

    constellation: Constellation
    s_idx: np.ndarray
    s: np.ndarray
    r: np.ndarray
    y: np.ndarray
    channels: list
    sigma_w2: float
    sigma_v2: float

    @property
    def T(self):
        return self.s.shape[0]

    @property
    def K(self):
        return self.s.shape[1]

    @property
    def L(self):
        return len(self.channels)


def simulate_frame(s_frame, ch, spec, sigma_w2, sigma_v2, rng):
    """r = s h + w, y = f(r) g + v for one frame of symbols."""
    if sigma_w2 < 0 or sigma_v2 < 0:
        raise ParameterDomainError("noise variances must be >= 0")
    s_frame = np.asarray(s_frame, dtype=float)
    w = rng.standard_normal(s_frame.shape) * np.sqrt(sigma_w2)
    v = rng.standard_normal(s_frame.shape) * np.sqrt(sigma_v2)
    r = s_frame * ch.h + w
    y = apply_relay_function(spec, r, ch.h) * ch.g + v
    return r, y


def draw_symbols(rng, constellation, shape, sweep=False):
    """Uniform i.i.d. symbol indices, or a deterministic cyclic sweep."""
    if sweep:
        n = int(np.prod(shape))
        return (np.arange(n) % constellation.M).reshape(shape)
    return rng.integers(0, constellation.M, size=shape)


def simulate_batch(constellation, spec, channels, T, K, sigma_w2, sigma_v2, rng, sweep=False):
    """T frames of K pilots through every relay in ``channels``."""
    s_idx = draw_symbols(rng, constellation, (T, K), sweep)
    s = constellation.points[s_idx]
    L = len(channels)
    r = np.empty((L, T, K))
    y = np.empty((L, T, K))
    for l, ch in enumerate(channels):
        for t in range(T):
            r[l, t], y[l, t] = simulate_frame(s[t], ch, spec, sigma_w2, sigma_v2, rng)
    return FrameBatch(constellation, s_idx, s, r, y, list(channels), sigma_w2, sigma_v2)


def zf_inputs(s_frame, h_used):
    """Zero-forced relay inputs s * h (h = estimate or truth depending on CSI)."""
    return np.asarray(s_frame, dtype=float) * float(h_used)


def snr_to_noise(snr_db, split=0.5):
    """(sigma_v2, sigma_w2) with sigma_v2 + sigma_w2 = 10^(-snr/10), relay share ``split``."""
    if not 0.0 <= split <= 1.0:
        raise ParameterDomainError(f"split must be in [0, 1], got {split}")
    total = 10.0 ** (-float(snr_db) / 10.0)
    return (1.0 - split) * total, split * total
