import itertools

import numpy as np
import pytest

from edgescale.agents.ask import (
    AskAgent,
    RegressionModel,
    brute_force_oracle,
    explore_action,
    fit,
    lattice,
    optimize,
    split_objective,
)
from edgescale.agents.base import ControlLoop
from edgescale.domain import DomainError, ServiceConfig, ServiceKind, default_specs
from edgescale.env import GroundTruthModel, ProcessingEnv, ground_truth_throughput
from edgescale.linear import FEATURES, LinearGaussianRegressor, RankDeficientError
from edgescale.monitoring import MetricSample

CV, QR = ServiceKind.CV, ServiceKind.QR
SPECS = default_specs(8.0)


def _reg(kind, coef):
    r = LinearGaussianRegressor(feature_names=FEATURES[kind])
    r.coef_ = np.asarray(coef, dtype=float)
    r.intercept_ = r.coef_[0]
    r.n_features_in_ = len(coef) - 1
    return r


def model_from(cv_coef, qr_coef):
    return RegressionModel(_reg(CV, cv_coef), _reg(QR, qr_coef))


def random_model(rng):
    # positive core slopes, negative quality and model slopes, as in the measured surfaces
    cv = [rng.uniform(0, 30), -rng.uniform(0, 0.1), -rng.uniform(0, 3), rng.uniform(0.1, 4)]
    qr = [rng.uniform(0, 150), -rng.uniform(0, 0.2), rng.uniform(1, 30)]
    return model_from(cv, qr)


def _valid(a, c_phy=8.0):
    cv, qr = a.configs()
    return (a.cv_cores >= 0.5 - 1e-9 and a.qr_cores >= 0.5 - 1e-9 and a.cv_cores + a.qr_cores <= c_phy + 1e-9
            and SPECS[CV].variable("quality").contains(cv.quality)
            and SPECS[CV].variable("model_size").contains(cv.model_size)
            and SPECS[QR].variable("quality").contains(qr.quality))


def test_explore_respects_bounds_and_budget():
    rng = np.random.default_rng(0)
    assert all(_valid(explore_action(rng)) for _ in range(2000))


def test_explore_reproducible():
    a = [explore_action(np.random.default_rng(5)) for _ in range(3)]
    assert a[0] == a[1] == a[2]


def test_explore_covers_quality_levels():
    rng = np.random.default_rng(1)
    seen = {explore_action(rng).cv_quality for _ in range(1000)}
    assert seen == set(SPECS[CV].variable("quality").levels())


def _linear_history(n, rng):
    out = []
    for i in range(n):
        a = explore_action(rng)
        out.append(MetricSample(i, CV, a.cv_quality, a.cv_cores,
                                2.0 - 0.01 * a.cv_quality + 0.5 * a.cv_model_size + 3.0 * a.cv_cores, a.cv_model_size))
        out.append(MetricSample(i, QR, a.qr_quality, a.qr_cores, 40.0 - 0.02 * a.qr_quality + 9.0 * a.qr_cores))
    return out


def test_fit_recovers_noiseless_linear_law():
    m = fit(_linear_history(30, np.random.default_rng(2)))
    assert np.allclose(m.cv.coef_, [2.0, -0.01, 0.5, 3.0], atol=1e-6)
    assert np.allclose(m.qr.coef_, [40.0, -0.02, 9.0], atol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_twenty_exploration_cycles_fit_within_tolerance(seed):
    agent = AskAgent(random_state=seed)
    loop = ControlLoop(agent.reset(), ProcessingEnv(seed=seed)).warm_up()
    for _ in range(20):
        loop.run_cycle()
    model = fit(agent.history_)
    for kind in (CV, QR):
        err = []
        qs = SPECS[kind].variable("quality").levels()
        ms = SPECS[CV].variable("model_size").levels() if kind == CV else [None]
        for q, mm, c in itertools.product(qs, ms, np.arange(0.5, 7.51, 0.5)):
            cfg = ServiceConfig(q, float(c), mm)
            a, b = model.affine(kind, q, mm)
            pred = min(max(a + b * c, 0.0), 100.0)
            err.append(pred - ground_truth_throughput(kind, cfg))
        # relative to the 0..100 throughput range
        assert np.sqrt(np.mean(np.square(err))) / 100.0 <= 0.25


def test_duplicate_history_is_rank_deficient():
    s = [MetricSample(i, k, q, 2.0, 10.0, m) for i in range(30) for k, q, m in ((CV, 192, 2), (QR, 500, None))]
    with pytest.raises(RankDeficientError):
        fit(s)


def test_agent_keeps_exploring_on_rank_deficiency(obs_factory):
    agent = AskAgent(random_state=0).reset()
    obs = obs_factory()
    for _ in range(25):
        a, _ = agent.decide(obs)
    assert agent.model_ is None and agent.first_optimized_cycle_ is None
    assert _valid(a)


def test_optimize_tangent_models_hit_oracle():
    # first-order expansions of the true surfaces at CV(288, 3, 3.8) and QR(900, 4.0)
    m = model_from([15.0, -10.0 / 288, -5.0 / 3, 5.0 / 3.8], [120.0, -2.0 / 15, 15.0])
    a, value = optimize(m)
    assert (a.cv_quality, a.cv_model_size, a.qr_quality) == (288, 3, 900)
    assert a.cv_cores == pytest.approx(3.80, abs=0.02)
    assert a.qr_cores >= 4.00 - 0.02
    assert value == pytest.approx(2.0)


def test_cores_blind_qr_gives_spare_cores_to_cv():
    m = model_from([0.0, 0.0, 0.0, 0.5], [50.0, 0.0, 0.0])
    a, _ = optimize(m)
    assert a.cv_cores == pytest.approx(7.5) and a.qr_cores == pytest.approx(0.5)


def test_optimize_infeasible_budget():
    m = random_model(np.random.default_rng(0))
    with pytest.raises(DomainError):
        optimize(m, c_phy=0.8)


@pytest.mark.parametrize("seed", range(20))
def test_optimize_dominates_grid(seed):
    m = random_model(np.random.default_rng(seed))
    a, value = optimize(m)
    grid = np.round(np.arange(0.5, 7.5 + 1e-9, 0.05), 10)
    best = max(split_objective(m, combo, grid, SPECS, 8.0).max() for combo in lattice(SPECS))
    assert value >= best - 1e-6
    assert split_objective(m, (a.cv_quality, a.cv_model_size, a.qr_quality), a.cv_cores, SPECS, 8.0) == pytest.approx(value)
    assert _valid(a)


@pytest.mark.parametrize("seed", range(5))
def test_breakpoints_match_dense_grid(seed):
    rng = np.random.default_rng(100 + seed)
    m = random_model(rng)
    _, value = optimize(m)
    dense = np.linspace(0.5, 7.5, 7001)
    best = max(split_objective(m, combo, dense, SPECS, 8.0).max() for combo in lattice(SPECS))
    assert abs(value - best) <= 1e-6 or value > best


def test_objective_non_decreasing_on_noiseless_data():
    gt = GroundTruthModel(noise_sigma=0.0)
    rng = np.random.default_rng(3)
    hist, values = [], []
    for i in range(60):
        cv, qr = explore_action(rng).configs()
        hist.append(MetricSample(i, CV, cv.quality, cv.cores, ground_truth_throughput(CV, cv, gt), cv.model_size))
        hist.append(MetricSample(i, QR, qr.quality, qr.cores, ground_truth_throughput(QR, qr, gt)))
        if i >= 20 and i % 5 == 0:
            values.append(optimize(fit(hist))[1])
    assert all(b >= a - 1e-9 for a, b in zip(values, values[1:]))


def test_oracle_default():
    a, phi = brute_force_oracle()
    assert phi == pytest.approx(1.0)
    assert (a.cv_quality, a.cv_model_size, a.qr_quality) == (288, 3, 900)
    assert a.cv_cores == pytest.approx(3.80, abs=0.05)
    assert a.qr_cores == pytest.approx(4.00, abs=0.05)


def test_oracle_tight_budget():
    _, phi = brute_force_oracle(GroundTruthModel(kappa_cv=10.0))
    assert phi < 1.0


def test_oracle_relaxed_budget():
    a, phi = brute_force_oracle(c_phy=16.0)
    assert phi == pytest.approx(1.0)
    assert a.cv_cores + a.qr_cores < 16.0


def test_act_phases_and_budget():
    agent = AskAgent(random_state=4)
    loop = ControlLoop(agent.reset(), ProcessingEnv(seed=4)).warm_up()
    for cycle in range(30):
        t = loop.run_cycle()
        cv, qr = t.observation.cv, t.observation.qr
        assert cv.cores + qr.cores <= 8.0 + 1e-9
        if cycle < 20:
            assert agent.first_optimized_cycle_ is None
    assert agent.first_optimized_cycle_ == 20


def test_ask_rejects_short_exploration():
    with pytest.raises(ValueError):
        AskAgent(exploration_iterations=3).reset()
