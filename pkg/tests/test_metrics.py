import numpy as np
import pytest

from relaygp.errors import ParameterDomainError
from relaygp.metrics import (
    bit_errors,
    candidate_values,
    grid_estimate,
    mean_abs_error,
    ml_detect,
    relative_total_error,
)
from relaygp.pipelines import FRAME, GridAggregate, estimate
from relaygp.gp_core import HyperPriors
from relaygp.icm import IcmConfig
from relaygp.relay_sim import (
    RelayFunctionSpec,
    apply_relay_function,
    draw_channels,
    make_pam,
    simulate_batch,
)

LIN = RelayFunctionSpec("linear", a=1.0, b=0.5)
ABS = RelayFunctionSpec("abs")


def test_errors_zero_at_truth():
    grid = np.linspace(-1, 1, 7)
    truth = apply_relay_function(LIN, grid)
    assert mean_abs_error(truth, LIN, grid) == 0.0
    assert relative_total_error(truth, LIN, grid) == 0.0


def test_mae_constant_offset():
    grid = np.linspace(-1, 1, 7)
    truth = apply_relay_function(LIN, grid)
    assert mean_abs_error(truth + 0.3, LIN, grid) == pytest.approx(0.3)
    assert mean_abs_error(truth - 0.3, LIN, grid) == pytest.approx(0.3)


def test_relative_error_scaling():
    grid = np.linspace(0.1, 2.0, 9)
    truth = apply_relay_function(ABS, grid)
    assert relative_total_error(1.09 * truth, ABS, grid) == pytest.approx(0.09)


def test_mask_and_empty_coverage():
    grid = np.array([0.0, 1.0, 2.0])
    est = np.array([0.5, 100.0, 2.5])
    mask = np.array([True, False, True])
    assert mean_abs_error(est, LIN, grid, mask) == pytest.approx(0.0)
    with pytest.raises(ParameterDomainError):
        mean_abs_error(est, LIN, grid, np.zeros(3, dtype=bool))
    with pytest.raises(ParameterDomainError):
        relative_total_error(np.zeros(1), ABS, np.zeros(1))


def test_metric_zero_iff_equal():
    rng = np.random.default_rng(0)
    grid = np.linspace(-1, 1, 5)
    truth = apply_relay_function(LIN, grid)
    for _ in range(20):
        est = truth.copy()
        k = rng.integers(0, 5)
        est[k] += rng.choice([-1, 1]) * rng.uniform(1e-9, 1)
        assert mean_abs_error(est, LIN, grid) > 0
        assert relative_total_error(est, LIN, grid) > 0


def test_grid_estimate_fills_uncovered_with_prediction():
    c = make_pam(16)
    chs = draw_channels(np.random.default_rng(0), 1, 0.0)
    b = simulate_batch(c, ABS, chs, 1, 4, 0.01, 0.01, np.random.default_rng(1))
    e = estimate(FRAME, b, 0, HyperPriors(), IcmConfig(J=3))
    mask = e.aggregate.mask
    assert not mask.all()
    vals = grid_estimate(e)
    mean, _ = e.predict_grid()
    np.testing.assert_array_equal(vals[mask], e.aggregate.m[mask])
    np.testing.assert_allclose(vals[~mask], mean[~mask])


def test_candidate_values_sources():
    c = make_pam(4)
    h = 0.8
    exact = candidate_values(LIN, c, h)
    np.testing.assert_allclose(exact, c.points * h + 0.5)
    grid = c.points * h
    np.testing.assert_allclose(candidate_values((grid, exact), c, h), exact)
    agg = GridAggregate.empty(grid)
    agg.update(exact, np.ones(4, dtype=bool))
    np.testing.assert_allclose(candidate_values(agg, c, h), exact)
    # demod genie reads the true gain, not the used one
    d = RelayFunctionSpec("demod", constellation=c)
    np.testing.assert_allclose(candidate_values(d, c, 1.0, h_true=1.0), c.points)


def test_noiseless_genie_detection_is_exact():
    c = make_pam(16)
    h, g = 0.9, 1.3
    y = apply_relay_function(LIN, c.points * h) * g
    np.testing.assert_array_equal(ml_detect(y, LIN, h, g, c), np.arange(16))
    assert ml_detect(float(y[5]), LIN, h, g, c) == 5


def test_abs_relay_ambiguity_breaks_to_lower_index():
    c = make_pam(4)
    y = apply_relay_function(ABS, c.points)
    np.testing.assert_array_equal(ml_detect(y, ABS, 1.0, 1.0, c), [0, 1, 1, 0])


def test_multi_relay_sum_matches_brute_force():
    rng = np.random.default_rng(3)
    c = make_pam(8)
    hs, gs, sv = [0.7, 1.2], [1.1, 0.6], [0.2, 0.5]
    y = rng.normal(size=(50, 2))
    got = ml_detect(y, [LIN, ABS], hs, gs, c, sv)
    cand = np.stack(
        [apply_relay_function(f, c.points * h) * g for f, h, g in zip([LIN, ABS], hs, gs)], axis=1
    )
    metric = ((y[:, None, :] - cand[None, :, :]) ** 2 / np.array(sv)).sum(axis=2)
    np.testing.assert_array_equal(got, np.argmin(metric, axis=1))


def test_bit_errors():
    c = make_pam(4)  # labels 0,1,3,2
    assert bit_errors(c, [0, 1, 2, 3], [0, 1, 2, 3]) == 0
    assert bit_errors(c, [0], [3]) == 1
    assert bit_errors(c, [0, 1], [2, 3]) == 2 + 2
    big = make_pam(64)
    rng = np.random.default_rng(1)
    a, b = rng.integers(0, 64, 500), rng.integers(0, 64, 500)
    expect = sum(bin(int(big.labels[i] ^ big.labels[j])).count("1") for i, j in zip(a, b))
    assert bit_errors(big, a, b) == expect


def test_genie_ber_decreases_with_snr():
    c = make_pam(4)
    rng = np.random.default_rng(5)
    idx = rng.integers(0, 4, 20000)
    noise = rng.normal(size=idx.size)
    bers = []
    for snr in (0, 5, 10, 15):
        sd = np.sqrt(10 ** (-snr / 10))
        y = apply_relay_function(LIN, c.points[idx]) + sd * noise
        bers.append(bit_errors(c, idx, ml_detect(y, LIN, 1.0, 1.0, c)) / (2 * idx.size))
    assert all(a >= b for a, b in zip(bers, bers[1:]))
