"""Config-driven experiment runner: metrics, BER curves and CSV artifacts.

A config file is flat ``key = value`` text; ``#`` starts a comment.  Every
key has a default (see ``KEYS``); unknown keys, duplicates and bad values
raise :class:`ConfigError` carrying the offending line and key.

Work is split into independent units, (relay function, SNR, trial) for the
estimation study and (SNR, trial) for BER, which may run in worker processes.
Results are reduced in unit order, so output files do not depend on ``jobs``.
"""

import csv
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .errors import ConfigError, RelayGPError
from .gp_core import HyperParams, HyperPriors
from .icm import IcmConfig
from .metrics import (
    bit_errors,
    candidate_values,
    grid_estimate,
    mean_abs_error,
    relative_total_error,
)
from .pipelines import APPROACHES, FRAME, FULL, SLIDING, estimate
from .relay_sim import (
    CSI_MODES,
    DEMOD,
    IMPERFECT,
    LINEAR,
    PERFECT,
    RELAY_FUNCTIONS,
    TANH,
    RelayFunctionSpec,
    apply_relay_function,
    draw_channels,
    draw_symbols,
    make_pam,
    simulate_batch,
    snr_to_noise,
    substream,
)
from . import kernels

log = logging.getLogger(__name__)

# substream keys
CHANNEL_STREAM = 0
PILOT_STREAM = 1
PAYLOAD_STREAM = 2

GENIE = "genie"
BER_MODES = (
    GENIE,
    f"{FULL}-{PERFECT}",
    f"{FULL}-{IMPERFECT}",
    f"{FRAME}-{PERFECT}",
    f"{FRAME}-{IMPERFECT}",
)

MAX_SEED = 2 ** 64 - 1


def _int(text):
    return int(text, 0)


def _float(text):
    v = float(text)
    if not math.isfinite(v):
        raise ValueError(f"not a finite number: {text}")
    return v


def _bool(text):
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text}")


def _list(item):
    def parse(text):
        parts = [p.strip() for p in text.split(",") if p.strip()]
        if not parts:
            raise ValueError("empty list")
        return tuple(item(p) for p in parts)

    return parse


def _choices(allowed):
    def parse(text):
        out = _list(str)(text)
        for v in out:
            if v not in allowed:
                raise ValueError(f"{v!r} not one of {', '.join(allowed)}")
        if len(set(out)) != len(out):
            raise ValueError("duplicate entries")
        return out

    return parse


def _range_list(text):
    """Comma list of floats, or ``start:stop:step`` (stop inclusive)."""
    if ":" in text:
        a, b, c = (_float(p) for p in text.split(":"))
        if c <= 0 or b < a:
            raise ValueError("range needs start <= stop and step > 0")
        n = int(math.floor((b - a) / c + 1e-9)) + 1
        return tuple(a + i * c for i in range(n))
    return _list(_float)(text)


# key -> (parser, help); defaults live on ExperimentConfig
KEYS = {
    "constellation_size": (_int, "PAM order M (power of two)"),
    "frames": (_int, "pilot frames T"),
    "symbols_per_frame": (_int, "pilots per frame K"),
    "relays": (_int, "number of relays L"),
    "icm_iters": (_int, "ICM sweep cap J"),
    "icm_tol": (_float, "stop when the log-posterior gains less than this"),
    "snr_db": (_range_list, "SNR list for the estimation study"),
    "csi_modes": (_choices(CSI_MODES), "perfect and/or imperfect"),
    "approaches": (_choices(APPROACHES), "full, sliding, frame"),
    "relay_functions": (_choices(RELAY_FUNCTIONS), "abs, linear, tanh, demod"),
    "linear_a": (_float, "linear relay gain"),
    "linear_b": (_float, "linear relay offset"),
    "tanh_a": (_float, "tanh relay amplitude"),
    "tanh_w": (_float, "tanh relay input scale"),
    "tanh_phi": (_float, "tanh relay phase"),
    "channel_err_var": (_float, "variance of the channel-estimate error"),
    "noise_split": (_float, "share of the total noise at the relay"),
    "window": (_int, "sliding-window length (0 means K)"),
    "overlap": (_float, "sliding-window overlap fraction in [0, 1)"),
    "grid_size": (_int, "aggregation grid size (0 means one point per symbol)"),
    "trials": (_int, "independent trials per cell"),
    "master_seed": (_int, "root of every random stream"),
    "output_dir": (str, "where CSVs go (relative to the working directory)"),
    "sigma_theta1": (_float, "prior variance of theta1"),
    "sigma_theta2": (_float, "prior variance of theta2"),
    "d_lo": (_float, "lower bound of the length-scale prior"),
    "d_hi": (_float, "upper bound of the length-scale prior"),
    "init_theta1": (_float, "ICM starting theta1"),
    "init_theta2": (_float, "ICM starting theta2"),
    "init_d": (_float, "ICM starting length-scale"),
    "full_cap": (_int, "largest K*T the full-information approach accepts"),
    "pilot_sweep": (_bool, "cycle pilots through the constellation instead of drawing them"),
    "ber": (_bool, "run the BER study"),
    "ber_snr_db": (_range_list, "BER SNR grid"),
    "ber_payload_bits": (_int, "payload bits per SNR point, over all trials"),
    "ber_trials": (_int, "channel realizations per BER point"),
    "ber_constellation_size": (_int, "PAM order for BER (0 means constellation_size)"),
    "ber_relays": (_int, "relays for BER (0 means relays)"),
    "dump_trials": (_int, "trials whose traces and grid estimates are written"),
    "record_wallclock": (_bool, "write measured run times (breaks byte-identical output)"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    constellation_size: int = 16
    frames: int = 16
    symbols_per_frame: int = 32
    relays: int = 1
    icm_iters: int = 50
    icm_tol: float = 1e-8
    snr_db: tuple = (0.0, 10.0)
    csi_modes: tuple = CSI_MODES
    approaches: tuple = APPROACHES
    relay_functions: tuple = RELAY_FUNCTIONS
    linear_a: float = 1.0
    linear_b: float = 0.5
    tanh_a: float = 1.0
    tanh_w: float = 2.0
    tanh_phi: float = 0.0
    channel_err_var: float = 0.2
    noise_split: float = 0.5
    window: int = 0
    overlap: float = 0.5
    grid_size: int = 0
    trials: int = 1
    master_seed: int = 1
    output_dir: str = "out"
    sigma_theta1: float = 1.0
    sigma_theta2: float = 100.0
    d_lo: float = 0.0
    d_hi: float = 10.0
    init_theta1: float = 0.0
    init_theta2: float = 1.0
    init_d: float = 1.0
    full_cap: int = 4096
    pilot_sweep: bool = False
    ber: bool = True
    ber_snr_db: tuple = tuple(float(x) for x in range(0, 15, 2))
    ber_payload_bits: int = 100000
    ber_trials: int = 20
    ber_constellation_size: int = 2
    ber_relays: int = 2
    dump_trials: int = 1
    record_wallclock: bool = False

    def validate(self, lines=None):
        """Raise :class:`ConfigError` on the first inconsistent field."""
        lines = lines or {}

        def bad(key, msg):
            raise ConfigError(msg, lines.get(key), key)

        for key in ("frames", "symbols_per_frame", "relays", "icm_iters", "trials",
                    "full_cap", "ber_payload_bits", "ber_trials"):
            if getattr(self, key) < 1:
                bad(key, "must be >= 1")
        for key in ("constellation_size", "ber_constellation_size"):
            m = getattr(self, key)
            if key == "ber_constellation_size" and m == 0:
                continue
            if m < 2 or m & (m - 1):
                bad(key, f"must be a power of two >= 2, got {m}")
        if self.ber_relays < 0:
            bad("ber_relays", "must be >= 0")
        if self.dump_trials < 0:
            bad("dump_trials", "must be >= 0")
        if self.icm_tol < 0:
            bad("icm_tol", "must be >= 0")
        if self.channel_err_var < 0:
            bad("channel_err_var", "must be >= 0")
        if not 0.0 <= self.noise_split <= 1.0:
            bad("noise_split", "must lie in [0, 1]")
        if not 0.0 <= self.overlap < 1.0:
            bad("overlap", "must lie in [0, 1)")
        if self.window != 0 and self.window < 2:
            bad("window", "must be 0 or >= 2")
        if self.window > self.frames * self.symbols_per_frame:
            bad("window", "longer than the pilot stream")
        if self.grid_size != 0 and self.grid_size < 2:
            bad("grid_size", "must be 0 or >= 2")
        if self.sigma_theta1 <= 0:
            bad("sigma_theta1", "must be > 0")
        if self.sigma_theta2 <= 0:
            bad("sigma_theta2", "must be > 0")
        if not self.d_lo < self.d_hi:
            bad("d_hi", "must exceed d_lo")
        if self.d_lo < 0:
            bad("d_lo", "must be >= 0")
        if not self.d_lo < self.init_d < self.d_hi:
            bad("init_d", "must lie strictly inside (d_lo, d_hi)")
        if not 0 <= self.master_seed <= MAX_SEED:
            bad("master_seed", "must be an unsigned 64-bit integer")
        if not self.output_dir:
            bad("output_dir", "must not be empty")
        return self

    # derived objects

    @property
    def constellation(self):
        return make_pam(self.constellation_size)

    @property
    def ber_constellation(self):
        return make_pam(self.ber_constellation_size or self.constellation_size)

    def relay_spec(self, variant, constellation=None):
        if variant == LINEAR:
            return RelayFunctionSpec(LINEAR, a=self.linear_a, b=self.linear_b)
        if variant == TANH:
            return RelayFunctionSpec(TANH, a=self.tanh_a, w=self.tanh_w, phi=self.tanh_phi)
        if variant == DEMOD:
            return RelayFunctionSpec(DEMOD, constellation=constellation or self.constellation)
        return RelayFunctionSpec(variant)

    @property
    def priors(self):
        return HyperPriors(
            (self.sigma_theta1, self.sigma_theta2), (self.d_lo, self.d_hi), 0.0,
        )

    @property
    def icm(self):
        init = HyperParams(self.init_theta1, self.init_theta2, self.init_d)
        return IcmConfig(J=self.icm_iters, tol=self.icm_tol, init=init)

    def approach_kwargs(self, approach):
        kw = {"grid_size": self.grid_size or None}
        if approach == FULL:
            kw["cap"] = self.full_cap
        elif approach == SLIDING:
            kw["window"] = self.window or None
            kw["overlap_frac"] = self.overlap
        return kw


def parse_config(text):
    """Parse config text into a validated :class:`ExperimentConfig`."""
    values = {}
    lines = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", lineno)
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError("unknown key", lineno, key)
        if key in values:
            raise ConfigError(f"duplicate key (first set on line {lines[key]})", lineno, key)
        if not value:
            raise ConfigError("missing value", lineno, key)
        parser = KEYS[key][0]
        try:
            values[key] = parser(value)
        except ValueError as err:
            raise ConfigError(f"bad value {value!r}: {err}", lineno, key) from None
        lines[key] = lineno
    return ExperimentConfig(**values).validate(lines)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def format_config(cfg):
    """Config text that parses back to ``cfg``."""
    out = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(_fmt(x) if isinstance(x, float) else str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = _fmt(v)
        out.append(f"{f.name} = {v}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# estimation study


def _fmt(x):
    return format(float(x), ".17g")


def _tag(x):
    return _fmt(x).replace("-", "m").replace(".", "p")


def run_id(function, csi, approach, snr, trial, relay):
    return f"{function}_{csi}_{approach}_snr{_tag(snr)}_t{trial}_r{relay}"


def trial_channels(cfg, trial, relays=None):
    rng = substream(cfg.master_seed, CHANNEL_STREAM, trial)
    return draw_channels(rng, relays or cfg.relays, cfg.channel_err_var, IMPERFECT)


@dataclass
class RunRecord:
    row: dict
    trace: np.ndarray = None
    table: dict = None
    error: str = None


def _trace_table(traces):
    rows = []
    for k, tr in enumerate(traces):
        for r in tr:
            rows.append((k, int(r[0]), r[1], r[2], r[3], r[4]))
    return rows


def _estimate_table(est, spec, h_true):
    grid = est.aggregate.grid
    vals = grid_estimate(est)
    _, var = est.predict_grid()
    half = 2.0 * np.sqrt(var)
    truth = apply_relay_function(spec, grid, h_true)
    return {
        "grid": grid, "estimate": vals, "variance": var, "lower": vals - half,
        "upper": vals + half, "truth": np.asarray(truth), "covered": est.aggregate.mask,
    }


def run_unit(cfg, function, snr, trial):
    """All CSI modes x approaches x relays for one (function, SNR, trial)."""
    C = cfg.constellation
    spec = cfg.relay_spec(function, C)
    chans = trial_channels(cfg, trial)
    sigma_v2, sigma_w2 = snr_to_noise(snr, cfg.noise_split)
    batch = simulate_batch(
        C, spec, chans, cfg.frames, cfg.symbols_per_frame, sigma_w2, sigma_v2,
        substream(cfg.master_seed, PILOT_STREAM, trial), sweep=cfg.pilot_sweep,
    )
    dump = trial < cfg.dump_trials
    out = []
    for csi in cfg.csi_modes:
        for approach in cfg.approaches:
            for relay in range(cfg.relays):
                rid = run_id(function, csi, approach, snr, trial, relay)
                row = {
                    "id": rid, "function": function, "csi_mode": csi, "approach": approach,
                    "snr_db": snr, "trial": trial, "relay": relay,
                }
                t0 = time.perf_counter()
                try:
                    est = estimate(
                        approach, batch, relay, cfg.priors, cfg.icm, csi,
                        **cfg.approach_kwargs(approach),
                    )
                    h_true = chans[relay].h
                    grid = est.aggregate.grid
                    vals = grid_estimate(est)
                    row["mae"] = mean_abs_error(vals, spec, grid, None, h_true)
                    row["rel_total_err"] = relative_total_error(vals, spec, grid, None, h_true)
                except RelayGPError as err:
                    log.error("run %s failed: %s", rid, err)
                    out.append(RunRecord(row, error=str(err)))
                    continue
                ms = int(round((time.perf_counter() - t0) * 1000.0))
                row.update({
                    "wallclock_ms": ms if cfg.record_wallclock else 0,
                    "icm_runs": est.stats["icm_runs"],
                    "icm_iterations": est.stats["iterations"],
                    "theta1": est.hp.theta1, "theta2": est.hp.theta2, "d": est.hp.d,
                })
                rec = RunRecord(row)
                if dump:
                    rec.trace = _trace_table(est.traces)
                    rec.table = _estimate_table(est, spec, h_true)
                out.append(rec)
    return out


# ---------------------------------------------------------------------------
# BER study


def _ber_relays(cfg):
    return cfg.ber_relays or cfg.relays


def payload_symbols(cfg):
    """Payload symbols per trial so the total reaches ``ber_payload_bits``."""
    bps = cfg.ber_constellation.bits_per_symbol
    return int(math.ceil(cfg.ber_payload_bits / (bps * cfg.ber_trials)))


def ber_unit(cfg, snr, trial):
    """Bit errors of every BER mode for one (SNR, trial); returns {mode: (errors, bits)}."""
    C = cfg.ber_constellation
    spec = cfg.relay_spec(LINEAR)
    L = _ber_relays(cfg)
    chans = trial_channels(cfg, trial, L)
    sigma_v2, sigma_w2 = snr_to_noise(snr, cfg.noise_split)
    batch = simulate_batch(
        C, spec, chans, cfg.frames, cfg.symbols_per_frame, sigma_w2, sigma_v2,
        substream(cfg.master_seed, PILOT_STREAM, trial), sweep=cfg.pilot_sweep,
    )
    n = payload_symbols(cfg)
    prng = substream(cfg.master_seed, PAYLOAD_STREAM, trial)
    sent = draw_symbols(prng, C, (n,))
    s = C.points[sent]
    y = np.empty((n, L))
    for l, ch in enumerate(chans):
        w = prng.standard_normal(n) * np.sqrt(sigma_w2)
        v = prng.standard_normal(n) * np.sqrt(sigma_v2)
        y[:, l] = apply_relay_function(spec, s * ch.h + w, ch.h) * ch.g + v
    bits = n * C.bits_per_symbol
    out = {}
    cand = np.column_stack([
        candidate_values(spec, C, ch.h, ch.h) * ch.g for ch in chans
    ])
    out[GENIE] = (bit_errors(C, sent, kernels.min_metric(y, np.ascontiguousarray(cand))), bits)
    for approach in (FULL, FRAME):
        for csi in CSI_MODES:
            cols = []
            for l, ch in enumerate(chans):
                est = estimate(
                    approach, batch, l, cfg.priors, cfg.icm, csi,
                    **cfg.approach_kwargs(approach),
                )
                h_used, g_used = ch.used(csi)
                cols.append(candidate_values(est, C, h_used) * g_used)
            det = kernels.min_metric(y, np.ascontiguousarray(np.column_stack(cols)))
            out[f"{approach}-{csi}"] = (bit_errors(C, sent, det), bits)
    return out


def ber_curve(cfg, jobs=1):
    """Rows (snr_db, mode, ber, trials, bit_errors, bits) over ``cfg.ber_snr_db``."""
    units = [(snr, t) for snr in cfg.ber_snr_db for t in range(cfg.ber_trials)]
    results = _map(_ber_worker, [(cfg, snr, t) for snr, t in units], jobs)
    totals = {}
    for (snr, _), res in zip(units, results):
        for mode, (e, b) in res.items():
            acc = totals.setdefault((snr, mode), [0, 0])
            acc[0] += e
            acc[1] += b
    rows = []
    for snr in cfg.ber_snr_db:
        for mode in BER_MODES:
            e, b = totals[(snr, mode)]
            rows.append((snr, mode, e / b, cfg.ber_trials, e, b))
    return rows


# ---------------------------------------------------------------------------
# orchestration


def _unit_worker(args):
    return run_unit(*args)


def _ber_worker(args):
    return ber_unit(*args)


def _map(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def estimation_units(cfg):
    return [
        (cfg, fn, snr, t)
        for fn in cfg.relay_functions
        for snr in cfg.snr_db
        for t in range(cfg.trials)
    ]


def run_estimation(cfg, jobs=1):
    """Every :class:`RunRecord` of the estimation study, in unit order."""
    records = []
    for recs in _map(_unit_worker, estimation_units(cfg), jobs):
        records.extend(recs)
    return records


METRIC_COLUMNS = (
    "id", "function", "csi_mode", "approach", "snr_db", "trial", "relay",
    "constellation_size", "frames", "symbols_per_frame", "icm_iters", "master_seed",
    "mae", "rel_total_err", "ber", "wallclock_ms", "icm_runs", "icm_iterations",
    "theta1", "theta2", "d",
)
BER_COLUMNS = ("snr_db", "mode", "ber", "trials", "bit_errors", "bits")
TRACE_COLUMNS = ("run", "iteration", "theta1", "theta2", "d", "log_posterior")
ESTIMATE_COLUMNS = ("grid", "estimate", "variance", "lower", "upper", "truth", "covered")


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return _fmt(v)
    if v is None:
        return ""
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def write_outputs(cfg, out_dir, records, ber_rows):
    os.makedirs(out_dir, exist_ok=True)
    echo = {
        "constellation_size": cfg.constellation_size, "frames": cfg.frames,
        "symbols_per_frame": cfg.symbols_per_frame, "icm_iters": cfg.icm_iters,
        "master_seed": cfg.master_seed, "ber": None,
    }
    rows = []
    for rec in records:
        if rec.error is not None:
            continue
        full = {**rec.row, **echo}
        rows.append([full[c] for c in METRIC_COLUMNS])
    _write_csv(os.path.join(out_dir, "metrics.csv"), METRIC_COLUMNS, rows)
    _write_csv(os.path.join(out_dir, "ber.csv"), BER_COLUMNS, ber_rows)
    for rec in records:
        if rec.trace is not None:
            _write_csv(os.path.join(out_dir, f"trace_{rec.row['id']}.csv"), TRACE_COLUMNS, rec.trace)
        if rec.table is not None:
            t = rec.table
            _write_csv(
                os.path.join(out_dir, f"estimate_{rec.row['id']}.csv"), ESTIMATE_COLUMNS,
                zip(*(t[c] for c in ESTIMATE_COLUMNS)),
            )


def run_experiment(cfg, out_dir=None, jobs=1):
    """Run everything ``cfg`` asks for and write the CSVs; returns the number of failed runs."""
    out_dir = out_dir or cfg.output_dir
    records = run_estimation(cfg, jobs)
    failed = sum(rec.error is not None for rec in records)
    ber_rows = []
    if cfg.ber:
        try:
            ber_rows = ber_curve(cfg, jobs)
        except RelayGPError as err:
            log.error("BER study failed: %s", err)
            failed += 1
    write_outputs(cfg, out_dir, records, ber_rows)
    return failed


def with_overrides(cfg, **kw):
    """Copy of ``cfg`` with non-None overrides applied and validated."""
    kw = {k: v for k, v in kw.items() if v is not None}
    return replace(cfg, **kw).validate() if kw else cfg


def config_dict(cfg):
    return asdict(cfg)
