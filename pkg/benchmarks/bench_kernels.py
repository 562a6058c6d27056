"""Numba vs pure-numpy kernels.

Part 1 times each kernel pair in-process (both variants live in
``relaygp.kernels``).  Part 2 times one frame-by-frame estimation end to end
under each backend, in a subprocess with ``RELAYGP_DISABLE_NUMBA`` set or
cleared, so the dispatch chosen at import time is exercised as in real runs.

    python3 benchmarks/bench_kernels.py [--repeat N] [--skip-end-to-end]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from relaygp import kernels
from relaygp._accel import HAVE_NUMBA


def cases(rng):
    x = np.sort(rng.uniform(-2, 2, 64))
    y = rng.uniform(-2, 2, 48)
    sq = kernels.sqdist_np(x, x)
    w = np.sqrt(rng.integers(1, 9, x.size).astype(float))
    b = rng.normal(size=x.size)
    ds = np.linspace(0.05, 9.95, 200)
    shift = np.full(ds.size, 1e-8)
    kinv = np.linalg.inv(kernels.se_gram_np(x, x, 0.7) + 0.1 * np.eye(x.size))
    kvec = kernels.se_gram_np(x[1:], x[:1], 0.7)[:, 0]
    vals = rng.uniform(-3, 3, 100_000)
    yy = rng.normal(size=(50_000, 2))
    cand = rng.normal(size=(16, 2))
    return {
        "sqdist 64x48": ("sqdist", (x, y)),
        "se_gram 64x48": ("se_gram", (x, y, 0.7)),
        "scaled_gram_stack 200x64x64": ("scaled_gram_stack", (sq, w, ds, 1e-8)),
        "chol_terms 200 x 64": ("chol_terms", (sq, w, b, ds, shift)),
        "downsize 64": ("downsize", (kinv,)),
        "upsize 63->64": ("upsize", (kinv[1:, 1:], kvec, 1.0)),
        "nearest_index 1e5 on 64": ("nearest_index", (vals, x)),
        "min_metric 5e4 x 16 x 2": ("min_metric", (yy, cand)),
    }


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, (base, args) in cases(rng).items():
        f_np = getattr(kernels, base + "_np")
        f_nb = getattr(kernels, base + "_nb")
        f_nb(*args)  # compile outside the timing
        t_np = min(timeit.repeat(lambda: f_np(*args), number=1, repeat=repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: f_nb(*args), number=1, repeat=repeat)) * 1e3
        print(f"{name:32s} {t_np:10.3f} {t_nb:10.3f} {t_np / t_nb:8.1f}x")


E2E = """
import time
from relaygp import kernels
from relaygp.gp_core import HyperPriors
from relaygp.icm import IcmConfig
from relaygp.pipelines import estimate
from relaygp.relay_sim import (RelayFunctionSpec, draw_channels, make_pam,
                               simulate_batch, snr_to_noise, substream)
C = make_pam(16)
spec = RelayFunctionSpec.default("tanh")
ch = draw_channels(substream(1, 0, 0), 1, 0.2)
sv, sw = snr_to_noise(10.0)
b = simulate_batch(C, spec, ch, 16, 32, sw, sv, substream(1, 1, 0))
estimate("frame", b, 0, HyperPriors(), IcmConfig(J=2))  # warm-up / JIT
t = time.perf_counter()
e = estimate("frame", b, 0, HyperPriors(), IcmConfig())
print(kernels.BACKEND, time.perf_counter() - t, e.stats["iterations"])
"""


def bench_end_to_end():
    print("\nframe-by-frame estimate, K=32, T=16, J=50 (one relay)")
    for disable in ("1", "0"):
        env = dict(os.environ, RELAYGP_DISABLE_NUMBA=disable)
        out = subprocess.run(
            [sys.executable, "-c", E2E], env=env, capture_output=True, text=True, check=True,
        ).stdout.split()
        print(f"  backend={out[0]:6s} {float(out[1]):8.2f} s  ({out[2]} ICM iterations)")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=20, help="timing repeats per kernel")
    p.add_argument("--skip-end-to-end", action="store_true")
    args = p.parse_args()
    if not HAVE_NUMBA:
        sys.exit("numba is not installed; nothing to compare")
    bench_kernels(args.repeat)
    if not args.skip_end_to_end:
        bench_end_to_end()


if __name__ == "__main__":
    main()
