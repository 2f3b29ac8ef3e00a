import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgescale.domain import ServiceConfig, ServiceKind
from edgescale.env import (
    BudgetViolation,
    GroundTruthModel,
    LgbnEnv,
    LgbnModel,
    ProcessingEnv,
    fit_lgbn,
    ground_truth_throughput,
    lgbn_sample,
    mean_throughput,
)
from edgescale.linear import LinearGaussianRegressor, RankDeficientError
from edgescale.monitoring import MetricSample

CV, QR = ServiceKind.CV, ServiceKind.QR
NOISELESS = GroundTruthModel(noise_sigma=0.0)


def test_ground_truth_examples():
    # 20 * 3.80 / ((288/128)^2 * 3) = 76 / 15.1875
    assert ground_truth_throughput(CV, ServiceConfig(288, 3.8, 3)) == pytest.approx(5.0, abs=0.01)
    assert ground_truth_throughput(QR, ServiceConfig(900, 4.0)) == pytest.approx(60.0, abs=1e-12)
    assert ground_truth_throughput(CV, ServiceConfig(128, 1e-12, 1)) == pytest.approx(0.0, abs=1e-9)
    assert ground_truth_throughput(QR, ServiceConfig(300, 1e-12)) == pytest.approx(0.0, abs=1e-9)


def test_ground_truth_clamps_at_100():
    assert ground_truth_throughput(QR, ServiceConfig(300, 7.5)) == 100.0


def test_ground_truth_rejects_unknown_kind():
    with pytest.raises(ValueError):
        ground_truth_throughput("GPU", ServiceConfig(300, 1.0))


cv_q = st.sampled_from(range(128, 321, 32))
cv_m = st.integers(1, 5)
cores = st.floats(0.1, 7.9)


@given(cv_q, cv_m, cores, cores)
def test_cv_throughput_increasing_in_cores(q, m, a, b):
    if a == b:
        return
    lo, hi = sorted((a, b))
    assert mean_throughput(CV, ServiceConfig(q, lo, m), NOISELESS) < mean_throughput(CV, ServiceConfig(q, hi, m), NOISELESS)


@given(cv_m, cores)
def test_cv_throughput_decreasing_in_quality_and_model(m, c):
    tps = [mean_throughput(CV, ServiceConfig(q, c, m), NOISELESS) for q in range(128, 321, 32)]
    assert all(x > y for x, y in zip(tps, tps[1:]))
    tps = [mean_throughput(CV, ServiceConfig(256, c, mm), NOISELESS) for mm in range(1, 6)]
    assert all(x > y for x, y in zip(tps, tps[1:]))


@given(cores)
def test_qr_throughput_decreasing_in_quality(c):
    tps = [mean_throughput(QR, ServiceConfig(q, c), NOISELESS) for q in range(300, 1001, 100)]
    assert all(x > y for x, y in zip(tps, tps[1:]))


def test_step_noop_keeps_config_and_emits_batches():
    env = ProcessingEnv(seed=3)
    before = env.state
    out = env.step()
    assert (env.state.cv, env.state.qr) == (before.cv, before.qr)
    assert env.state.step_index == 1
    assert len(out.samples) == 10
    for kind in (CV, QR):
        tps = [s.throughput for s in out.samples if s.service == kind]
        mu = ground_truth_throughput(kind, before.config(kind))
        assert len(tps) == 5
        # 5% relative noise: 5 sigma band
        assert all(abs(t - mu) <= 0.25 * mu + 1e-9 for t in tps)
    assert out.free_cores == pytest.approx(4.0)


def test_step_more_cores_raises_cv_throughput():
    env = ProcessingEnv(NOISELESS, seed=0)
    start = ServiceConfig(288, 3.8, 3)
    env.step(start, ServiceConfig(900, 4.0))
    out = env.step(start.with_(cores=4.8), ServiceConfig(900, 3.0))
    tp = [s.throughput for s in out.samples if s.service == CV]
    assert tp == pytest.approx([20 * 4.8 / 15.1875] * 5)
    assert tp[0] == pytest.approx(6.32, abs=0.005)


def test_step_rejects_budget_violation():
    env = ProcessingEnv(seed=0)
    with pytest.raises(BudgetViolation, match="exceeded"):
        env.step(ServiceConfig(288, 4.5, 3), ServiceConfig(900, 4.0))
    with pytest.raises(ValueError):
        env.step(ServiceConfig(352, 2.0, 3), None)


def test_step_reproducible():
    a, b = ProcessingEnv(seed=11), ProcessingEnv(seed=11)
    for _ in range(4):
        sa, sb = a.step().samples, b.step().samples
        assert sa == sb


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), cv_q, cv_m, st.integers(1, 14), st.sampled_from(range(300, 1001, 100)))
def test_samples_in_range(seed, q, m, k, qq):
    env = ProcessingEnv(GroundTruthModel(noise_sigma=0.5), seed=seed)
    out = env.step(ServiceConfig(q, k * 0.5, m), ServiceConfig(qq, 8.0 - k * 0.5 if k < 16 else 0.5))
    assert all(0.0 <= s.throughput <= 100.0 for s in out.samples)


def _samples(kind, rows, tps):
    out = []
    for i, (row, tp) in enumerate(zip(rows, tps)):
        if kind == CV:
            q, m, c = row
            out.append(MetricSample(i, CV, q, c, tp, m))
        else:
            q, c = row
            out.append(MetricSample(i, QR, q, c, tp))
    return out


def _random_history(n, seed, model=GroundTruthModel()):
    rng = np.random.default_rng(seed)
    hist = []
    for i in range(n):
        cv = ServiceConfig(int(rng.choice(range(128, 321, 32))), float(rng.uniform(0.5, 7.5)), int(rng.integers(1, 6)))
        qr = ServiceConfig(int(rng.choice(range(300, 1001, 100))), float(rng.uniform(0.5, 7.5)))
        for kind, cfg in ((CV, cv), (QR, qr)):
            tp = ground_truth_throughput(kind, cfg, model, noisy=True, rng=rng)
            hist.append(MetricSample(i, kind, cfg.quality, cfg.cores, tp, cfg.model_size))
    return hist


def test_fit_lgbn_exact_linear_law():
    rng = np.random.default_rng(0)
    rows_cv = [(int(rng.choice(range(128, 321, 32))), int(rng.integers(1, 6)), float(rng.uniform(0.5, 7))) for _ in range(30)]
    rows_qr = [(int(rng.choice(range(300, 1001, 100))), float(rng.uniform(0.5, 7))) for _ in range(30)]
    hist = _samples(CV, rows_cv, [1 + 2 * r[2] for r in rows_cv]) + _samples(QR, rows_qr, [1 + 2 * r[1] for r in rows_qr])
    lg = fit_lgbn(hist)
    np.testing.assert_allclose(lg.coef(CV), [1, 0, 0, 2], atol=1e-6)
    np.testing.assert_allclose(lg.coef(QR), [1, 0, 2], atol=1e-6)
    assert lg.sigma(CV) == pytest.approx(0, abs=1e-6)


def test_fit_lgbn_approximates_ground_truth():
    lg = fit_lgbn(_random_history(1000, seed=5))
    for kind in (CV, QR):
        errs = []
        if kind == CV:
            grid = itertools.product(range(128, 321, 32), range(1, 6), np.arange(0.5, 7.51, 0.5))
            cfgs = [ServiceConfig(q, c, m) for q, m, c in grid]
        else:
            cfgs = [ServiceConfig(q, c) for q, c in itertools.product(range(300, 1001, 100), np.arange(0.5, 7.51, 0.5))]
        for cfg in cfgs:
            errs.append(lg.predict(kind, cfg) - ground_truth_throughput(kind, cfg))
        rmse = float(np.sqrt(np.mean(np.square(errs))))
        # relative to the throughput range [0, 100]
        assert rmse / 100.0 <= 0.15, (kind, rmse)


def test_fit_lgbn_constant_history_is_rank_deficient():
    hist = [MetricSample(i, k, q, 2.0, 10.0, m) for i in range(10) for k, q, m in ((CV, 192, 2), (QR, 500, None))]
    with pytest.raises(RankDeficientError) as err:
        fit_lgbn(hist)
    assert err.value.predictor == "quality"


def test_fit_lgbn_needs_enough_samples():
    with pytest.raises(ValueError, match="at least"):
        fit_lgbn(_random_history(3, seed=0))


def _model(coef, sigma):
    reg = LinearGaussianRegressor()
    reg.coef_ = np.asarray(coef, dtype=float)
    reg.sigma_ = sigma
    reg.n_features_in_ = len(coef) - 1
    return LgbnModel({QR: reg, CV: reg})


def test_lgbn_sample_zero_sigma_is_exact():
    lg = _model([1.0, 0.01, 2.0], 0.0)
    cfg = ServiceConfig(500, 3.0)
    assert lgbn_sample(lg, QR, cfg, rng=0) == pytest.approx(1 + 5 + 6)


def test_lgbn_sample_law_of_large_numbers():
    sigma = 4.0
    lg = _model([10.0, 0.01, 2.0], sigma)
    cfg = ServiceConfig(500, 3.0)
    rng = np.random.default_rng(1)
    n = 10_000
    draws = np.array([lgbn_sample(lg, QR, cfg, rng) for _ in range(n)])
    assert abs(draws.mean() - 21.0) <= 3 * sigma / np.sqrt(n)


def test_lgbn_sample_clamps_negative():
    lg = _model([-50.0, 0.0, 1.0], 0.0)
    assert lgbn_sample(lg, QR, ServiceConfig(500, 3.0), rng=0) == 0.0


def test_lgbn_env_uses_fitted_model():
    lg = _model([30.0, 0.0, 0.0], 0.0)
    reg_cv = LinearGaussianRegressor()
    reg_cv.coef_, reg_cv.sigma_, reg_cv.n_features_in_ = np.array([7.0, 0, 0, 0]), 0.0, 3
    lg.regressors[CV] = reg_cv
    env = LgbnEnv(lg, seed=0)
    out = env.step()
    assert {s.throughput for s in out.samples if s.service == QR} == {30.0}
    assert {s.throughput for s in out.samples if s.service == CV} == {7.0}
    with pytest.raises(ValueError):
        LgbnEnv(LgbnModel())
