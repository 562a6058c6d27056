import numpy as np
import pytest
from scipy import optimize

from relaygp import icm
from relaygp.errors import DegeneracyError, ParameterDomainError
from relaygp.gp_core import HyperParams, HyperPriors, TrainingSet, log_joint_posterior
from relaygp.icm import (
    IcmConfig,
    d_objective,
    run_icm,
    theta_normal_equations,
    update_d,
    update_f,
    update_theta,
)
from relaygp.kernel_algebra import JITTER_START, GroupedGram, gram_derivative, gram_matrix, sq_dist_matrix


def se(x, d):
    x = np.asarray(x)
    return np.exp(-((x[:, None] - x[None, :]) ** 2) / (2 * d * d))


def spread_inputs(rng, n, lo=-3.0, hi=3.0, gap=0.25):
    """n distinct inputs at least ``gap`` apart (well-conditioned Gram at short d)."""
    base = np.linspace(lo, hi, n)
    return base + rng.uniform(-gap / 4, gap / 4, size=n) * (hi - lo) / n


def instance(seed, n=12, d=0.4, noise=0.1):
    rng = np.random.default_rng(seed)
    x = spread_inputs(rng, n)
    y = np.sin(x) + 0.3 * x + rng.normal(scale=np.sqrt(noise), size=n)
    return rng, TrainingSet(x, y), HyperPriors(noise_var_v=noise), HyperParams(0.1, 0.5, d)


# --- f ---------------------------------------------------------------------------


def test_update_f_single_point():
    train = TrainingSet([0.0], [2.0])
    f = update_f(train, HyperParams(0.0, 0.0, 1.0), HyperPriors(noise_var_v=1.0))
    assert f[0] == pytest.approx(1.0, abs=1e-7)


def test_update_f_small_noise_returns_targets():
    _, train, _, hp = instance(0)
    f = update_f(train, hp, HyperPriors(noise_var_v=1e-8))
    np.testing.assert_allclose(f, train.targets, atol=1e-5)


def test_update_f_zero_noise_is_identity():
    _, train, _, hp = instance(1)
    np.testing.assert_array_equal(update_f(train, hp, HyperPriors(noise_var_v=0.0)), train.targets)


def test_update_f_solves_mode_equation():
    for seed in range(10):
        _, train, pri, hp = instance(seed, d=0.3)
        M = update_f(train, hp, pri)
        Cinv = np.linalg.inv(se(train.inputs, hp.d) + JITTER_START * np.eye(train.n))
        M0 = hp.theta1 + hp.theta2 * train.inputs
        s2 = pri.noise_var_v
        lhs = (Cinv + np.eye(train.n) / s2) @ M
        rhs = Cinv @ M0 + train.targets / s2
        assert np.max(np.abs(lhs - rhs)) < 1e-7 * (1 + np.linalg.norm(train.targets))


def test_update_f_no_local_ascent():
    _, train, pri, hp = instance(3, n=12, d=0.3)
    M = update_f(train, hp, pri)

    def neg(f):
        return -log_joint_posterior(f, hp, train, pri)

    res = optimize.minimize(neg, M, method="BFGS", options={"gtol": 1e-10})
    assert -res.fun - (-neg(M)) <= 1e-9


def test_update_f_accepts_precomputed_inverse():
    _, train, pri, hp = instance(4)
    inv = gram_matrix(train.inputs, hp.d, JITTER_START + pri.noise_var_v).K_inv
    np.testing.assert_allclose(
        update_f(train, hp, pri, noisy_inv=inv), update_f(train, hp, pri), atol=1e-9
    )


# --- theta -------------------------------------------------------------------------


def test_update_theta_zero_function():
    _, train, pri, hp = instance(5)
    gram = GroupedGram(train.groups, hp.d)
    t1, t2 = update_theta(np.zeros(train.n), gram, train.inputs, pri)
    assert t1 == pytest.approx(0.0, abs=1e-12) and t2 == pytest.approx(0.0, abs=1e-12)


def test_update_theta_recovers_line_under_vague_prior():
    rng = np.random.default_rng(6)
    x = spread_inputs(rng, 20)
    f = -0.7 + 1.9 * x
    pri = HyperPriors(sigma_theta=(1e8, 1e8), noise_var_v=0.1)
    gram = GroupedGram.from_inputs(x, 0.3)
    t1, t2 = update_theta(f, gram, x, pri)
    assert t1 == pytest.approx(-0.7, abs=1e-3)
    assert t2 == pytest.approx(1.9, abs=1e-3)


def cramer_oracle(f, x, d, priors):
    """Independent closed form of the 2x2 stationarity system (Cramer's rule)."""
    Cinv = np.linalg.inv(se(x, d) + JITTER_START * np.eye(x.size))
    one = np.ones_like(x)
    s1, s2 = priors.sigma_theta
    a11 = one @ Cinv @ one + 1.0 / s1
    a12 = one @ Cinv @ x
    a22 = x @ Cinv @ x + 1.0 / s2
    b1 = one @ Cinv @ f
    b2 = x @ Cinv @ f
    det = a11 * a22 - a12 * a12
    return (b1 * a22 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det


def test_update_theta_matches_cramer_and_optimizer():
    for seed in range(10):
        rng, train, pri, hp = instance(seed, d=0.3)
        f = train.targets + rng.normal(scale=0.1, size=train.n)
        gram = GroupedGram(train.groups, hp.d)
        got = np.array(update_theta(f, gram, train.inputs, pri))
        np.testing.assert_allclose(got, cramer_oracle(f, train.inputs, hp.d, pri), rtol=1e-7, atol=1e-9)

        def neg(th):
            return -log_joint_posterior(f, HyperParams(th[0], th[1], hp.d), train, pri)

        res = optimize.minimize(neg, np.zeros(2), method="BFGS", options={"gtol": 1e-9})
        np.testing.assert_allclose(got, res.x, atol=1e-5)


def test_update_theta_satisfies_linear_system():
    rng, train, pri, hp = instance(11, d=0.3)
    f = train.targets
    gram = GroupedGram(train.groups, hp.d)
    A, b = theta_normal_equations(f, gram, train.inputs, pri)
    th = np.array(update_theta(f, gram, train.inputs, pri))
    assert np.max(np.abs(A @ th - b)) <= 1e-7 * max(1.0, np.max(np.abs(b)))


def test_update_theta_degenerate_system():
    x = np.zeros(5)
    pri = HyperPriors(sigma_theta=(1e20, 1e20))
    gram = GroupedGram.from_inputs(x, 1.0)
    with pytest.raises(DegeneracyError):
        update_theta(np.ones(5), gram, x, pri)


# --- d -----------------------------------------------------------------------------


def dense_d_objective(f, hp, x, d):
    C = se(x, d) + JITTER_START * np.eye(x.size)
    r = f - (hp.theta1 + hp.theta2 * x)
    return -0.5 * (np.linalg.slogdet(C)[1] + r @ np.linalg.solve(C, r))


def test_update_d_beats_every_grid_point_and_stays_in_support():
    for seed in range(5):
        _, train, pri, hp = instance(seed)
        d = update_d(train.targets, hp, train, pri)
        assert 0.0 < d < 10.0
        grid = np.linspace(1e-3, 10 - 1e-3, 200)
        vals = d_objective(train.targets, hp, train, grid)
        assert d_objective(train.targets, hp, train, [d])[0] >= vals.max()


def gp_sample(seed, n=64, d_true=1.0):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(-3, 3, size=n))
    C = se(x, d_true) + JITTER_START * np.eye(n)
    f = np.linalg.cholesky(C) @ rng.normal(size=n)
    return x, f


def test_update_d_recovers_generating_scale():
    errs = []
    hp = HyperParams(0.0, 0.0, 1.0)
    pri = HyperPriors(noise_var_v=0.1)
    for seed in range(20):
        x, f = gp_sample(seed)
        train = TrainingSet(x, f)
        errs.append(abs(update_d(f, hp, train, pri) - 1.0))
    assert np.median(errs) <= 0.25


def test_update_d_matches_dense_optimizer():
    for seed in range(10):
        rng, train, pri, hp = instance(seed, n=10)
        f = train.targets
        got = update_d(f, hp, train, pri)
        x = train.inputs
        grid = np.linspace(1e-3, 10 - 1e-3, 2000)
        vals = [dense_d_objective(f, hp, x, d) for d in grid]
        k = int(np.argmax(vals))
        res = optimize.minimize_scalar(
            lambda d: -dense_d_objective(f, hp, x, d),
            bounds=(grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]),
            method="bounded", options={"xatol": 1e-9},
        )
        assert got == pytest.approx(res.x, abs=1e-3)


def test_update_d_stationarity_with_analytic_gradient():
    # interior optimum: f drawn at a moderate scale, short-range inputs
    hp = HyperParams(0.0, 0.0, 1.0)
    pri = HyperPriors(noise_var_v=0.1)
    checked = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        x = np.linspace(-3, 3, 12) + rng.uniform(-0.05, 0.05, size=12)
        f = np.linalg.cholesky(se(x, 0.5) + 1e-8 * np.eye(12)) @ rng.normal(size=12)
        train = TrainingSet(x, f)
        d = update_d(f, hp, train, pri)
        if not 0.05 < d < 9.9:
            continue
        st_ = gram_matrix(x, d)
        C_inv = st_.K_inv
        dK = gram_derivative(st_, sq_dist_matrix(x))
        a = C_inv @ f
        t1 = -0.5 * np.trace(C_inv @ dK)
        t2 = 0.5 * a @ dK @ a
        assert abs(t1 + t2) < 1e-5 * (abs(t1) + abs(t2))
        checked += 1
    assert checked >= 5


# --- loop ------------------------------------------------------------------------------


def test_one_iteration_is_composition_of_updates():
    _, train, pri, _ = instance(12)
    init = HyperParams(0.0, 1.0, 1.0)
    res = run_icm(train, pri, init, J=1)
    f = update_f(train, init, pri)
    t1, t2 = update_theta(f, GroupedGram(train.groups, init.d), train.inputs, pri)
    d = update_d(f, HyperParams(t1, t2, init.d), train, pri)
    np.testing.assert_array_equal(res.f_map, f)
    assert (res.hp.theta1, res.hp.theta2, res.hp.d) == (t1, t2, d)
    assert res.iterations_run == 1
    assert res.trace.shape == (2, 5)


def test_trace_is_monotone_and_deterministic():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 64))
        levels = rng.uniform(-1.5, 1.5, size=int(rng.integers(2, 17)))
        x = levels[rng.integers(0, levels.size, size=n)]
        y = np.tanh(2 * x) + rng.normal(scale=0.3, size=n)
        pri = HyperPriors(noise_var_v=float(rng.uniform(0.01, 1.0)))
        train = TrainingSet(x, y)
        a = run_icm(train, pri, J=15)
        lp = a.log_posterior
        assert np.all(np.diff(lp) >= -1e-9)
        b = run_icm(train, pri, J=15)
        np.testing.assert_array_equal(a.trace, b.trace)
        assert a.iterations_run <= 15


def test_stops_on_tolerance():
    _, train, pri, _ = instance(13)
    res = run_icm(train, pri, J=500, tol=1e-3)
    assert res.converged
    assert res.iterations_run < 500
    assert res.trace[-1, 4] - res.trace[-2, 4] < 1e-3


def test_config_run_matches_function():
    _, train, pri, _ = instance(14)
    cfg = IcmConfig(J=5)
    np.testing.assert_array_equal(cfg.run(train, pri).trace, run_icm(train, pri, J=5).trace)


def test_rejects_bad_iteration_count():
    _, train, pri, _ = instance(15)
    with pytest.raises(ParameterDomainError):
        run_icm(train, pri, J=0)


def test_errors_are_annotated_with_iteration(monkeypatch):
    _, train, pri, _ = instance(16)
    calls = {"n": 0}
    real = icm.update_theta

    def flaky(*a, **kw):
        calls["n"] += 1
        if calls["n"] == 2:
            raise DegeneracyError("theta normal equations are singular")
        return real(*a, **kw)

    monkeypatch.setattr(icm, "update_theta", flaky)
    with pytest.raises(DegeneracyError) as info:
        run_icm(train, pri, J=5, tol=0.0)
    assert str(info.value).startswith("ICM iteration 2:")
    assert info.value.iteration == 2
