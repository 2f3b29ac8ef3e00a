"""Analysis of Structural Knowledge: explore, regress, then solve the allocation exactly.

After a random exploration phase the agent fits one linear throughput model
per service and maximizes the summed SLO fulfillment under the core budget.
Discrete variables are enumerated; for each lattice combination the core
split is a one-dimensional piecewise-linear problem, solved exactly by
evaluating its breakpoints.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from ..domain import DeviceSpec, DomainError, ServiceConfig, ServiceKind, default_specs
from ..env import GroundTruthModel, mean_throughput
from ..linear import FEATURES, LinearGaussianRegressor, RankDeficientError, design
from .base import MIN_CORES, Agent, Assignment

CV, QR = ServiceKind.CV, ServiceKind.QR

_TIE = 1e-12


@dataclass(frozen=True)
class RegressionModel:
    """Fitted throughput regressions for both services."""

    cv: LinearGaussianRegressor
    qr: LinearGaussianRegressor

    def regressor(self, kind):
        return self.cv if kind == CV else self.qr

    def affine(self, kind, quality, model_size=None):
        """Throughput as ``a + b * cores`` for fixed discrete settings."""
        coef = self.regressor(kind).coef_
        if kind == CV:
            return coef[0] + coef[1] * quality + coef[2] * model_size, coef[3]
        return coef[0] + coef[1] * quality, coef[2]


def fit(history) -> RegressionModel:
    """Least-squares throughput models; raises RankDeficientError on degenerate data."""
    regs = {}
    for kind in (CV, QR):
        X, y = design(history, kind)
        regs[kind] = LinearGaussianRegressor(feature_names=FEATURES[kind]).fit(X, y)
    return RegressionModel(regs[CV], regs[QR])


def _static_phi(kind, quality, model_size, specs):
    """SLO ratios that do not depend on cores, summed."""
    total = 0.0
    for q in specs[kind].slos:
        if q.variable == "quality":
            total += min(quality / q.target, 1.0)
        elif q.variable == "model_size":
            total += min(model_size / q.target, 1.0)
    return total


def _tp_target(kind, specs):
    return next(q.target for q in specs[kind].slos if q.variable == "throughput")


def _tp_phi(a, b, cores, target):
    tp = np.clip(a + b * cores, 0.0, 100.0)
    return np.minimum(tp / target, 1.0)


def _breakpoints(a, b, target):
    """Cores values where the clamped throughput ratio changes slope."""
    if b == 0:
        return ()
    return ((0.0 - a) / b, (target - a) / b, (100.0 - a) / b)


def split_objective(model: RegressionModel, combo, c_cv, specs, c_phy):
    """Summed fulfillment (one term per service) for a lattice combo and CV cores."""
    q_cv, m_cv, q_qr = combo
    n_cv, n_qr = len(specs[CV].slos), len(specs[QR].slos)
    a_cv, b_cv = model.affine(CV, q_cv, m_cv)
    a_qr, b_qr = model.affine(QR, q_qr)
    c_cv = np.asarray(c_cv, dtype=float)
    phi_cv = (_static_phi(CV, q_cv, m_cv, specs) + _tp_phi(a_cv, b_cv, c_cv, _tp_target(CV, specs))) / n_cv
    phi_qr = (_static_phi(QR, q_qr, None, specs) + _tp_phi(a_qr, b_qr, c_phy - c_cv, _tp_target(QR, specs))) / n_qr
    return phi_cv + phi_qr


def lattice(specs):
    return list(itertools.product(
        specs[CV].variable("quality").levels(),
        specs[CV].variable("model_size").levels(),
        specs[QR].variable("quality").levels(),
    ))


def optimize(model: RegressionModel, specs=None, c_phy: float = 8.0):
    """Exact maximizer of the summed fulfillment under ``model``.

    Returns ``(Assignment, objective)``. All cores are handed out:
    ``c_qr = c_phy - c_cv`` with ``c_cv`` in ``[0.5, c_phy - 0.5]``.
    """
    specs = specs or default_specs(c_phy)
    lo, hi = MIN_CORES, c_phy - MIN_CORES
    if lo > hi:
        raise DomainError(f"c_phy={c_phy} cannot give every service {MIN_CORES} cores")
    t_cv, t_qr = _tp_target(CV, specs), _tp_target(QR, specs)
    best = None
    for combo in lattice(specs):
        q_cv, m_cv, q_qr = combo
        a_cv, b_cv = model.affine(CV, q_cv, m_cv)
        a_qr, b_qr = model.affine(QR, q_qr)
        cands = {lo, hi}
        cands.update(_breakpoints(a_cv, b_cv, t_cv))
        # QR breakpoints live in c_qr = c_phy - c_cv
        cands.update(c_phy - c for c in _breakpoints(a_qr, b_qr, t_qr))
        xs = np.array(sorted(c for c in cands if lo <= c <= hi))
        vals = split_objective(model, combo, xs, specs, c_phy)
        i = int(np.argmax(vals))
        # combos come in ascending order, xs ascending: strict improvement keeps the tie-break
        if best is None or vals[i] > best[0] + _TIE:
            best = (float(vals[i]), combo, float(xs[i]))
    value, (q_cv, m_cv, q_qr), c_cv = best
    return Assignment(q_cv, m_cv, c_cv, q_qr, c_phy - c_cv), value


def brute_force_oracle(model: GroundTruthModel = GroundTruthModel(), specs=None, c_phy: float = 8.0,
                       core_step: float = 0.05):
    """Exhaustive search with the noiseless ground truth.

    Both core allocations range over the grid ``k * core_step`` (k >= 1)
    with ``c_cv + c_qr <= c_phy``. Ties go to the smallest total cores, then
    the lexicographically smallest (quality, model, quality, c_cv).
    Returns ``(Assignment, phi_star)`` with phi_star the mean over services.
    """
    specs = specs or default_specs(c_phy)
    steps_per_core = round(1.0 / core_step)
    if abs(steps_per_core * core_step - 1.0) > 1e-12:
        raise DomainError("core_step must divide 1")
    n = int(np.floor(c_phy * steps_per_core + 1e-9))
    grid = np.arange(1, n) / steps_per_core

    def phi_along(kind, quality, model_size):
        spec = specs[kind]
        tps = np.array([
            min(max(mean_throughput(kind, ServiceConfig(quality, c, model_size), model), 0.0), 100.0)
            for c in grid
        ])
        static = _static_phi(kind, quality, model_size, specs)
        return (static + np.minimum(tps / _tp_target(kind, specs), 1.0)) / len(spec.slos)

    cv_curves = {(q, m): phi_along(CV, q, m) for q in specs[CV].variable("quality").levels()
                 for m in specs[CV].variable("model_size").levels()}
    qr_curves = {q: phi_along(QR, q, None) for q in specs[QR].variable("quality").levels()}
    feasible = grid[:, None] + grid[None, :] <= c_phy + 1e-9
    total = grid[:, None] + grid[None, :]
    best = None
    for (q_cv, m_cv, q_qr) in lattice(specs):
        phi = (cv_curves[(q_cv, m_cv)][:, None] + qr_curves[q_qr][None, :]) / 2.0
        phi = np.where(feasible, phi, -np.inf)
        top = phi.max()
        idx = np.argwhere(phi >= top - _TIE)
        i, j = min(idx, key=lambda ij: (total[ij[0], ij[1]], ij[0]))
        if best is None or top > best[0] + _TIE or (abs(top - best[0]) <= _TIE and total[i, j] < best[1] - 1e-9):
            best = (float(top), float(total[i, j]), Assignment(q_cv, m_cv, float(grid[i]), q_qr, float(grid[j])))
    return best[2], best[0]


class AskAgent(Agent):
    """Random exploration for ``exploration_iterations`` cycles, then regression + optimization.

    Parameters
    ----------
    exploration_iterations : int
        Cycles of uniformly random assignments before the first fit.
    refit_every : int
        Cycles between regression refits once optimizing.
    random_state : int or None
        Seed for the exploration draws.
    """

    name = "ask"

    def __init__(self, exploration_iterations=20, refit_every=5, random_state=None):
        self.exploration_iterations = exploration_iterations
        self.refit_every = refit_every
        self.random_state = random_state

    def reset(self, device=DeviceSpec()):
        super().reset(device)
        if self.exploration_iterations < len(FEATURES[CV]) + 2:
            raise ValueError("exploration_iterations must be at least predictors + 2")
        self.specs_ = default_specs(device.c_phy)
        self.rng_ = np.random.default_rng(self.random_state)
        self.history_ = []
        self.model_ = None
        self.last_fit_ = None
        self.first_optimized_cycle_ = None
        return self

    def explore_action(self, obs=None) -> Assignment:
        return explore_action(self.rng_, self.specs_, self.device_.c_phy)

    def act(self, obs):
        self.history_.extend((obs.cv, obs.qr))
        cycle = self.cycle_
        if cycle < self.exploration_iterations:
            return self.explore_action(obs)
        due = self.model_ is None or cycle - self.last_fit_ >= self.refit_every
        if due:
            try:
                self.model_ = fit(self.history_)
                self.last_fit_ = cycle
            except RankDeficientError:
                if self.model_ is None:
                    return self.explore_action(obs)
        if self.first_optimized_cycle_ is None:
            self.first_optimized_cycle_ = cycle
        assignment, _ = optimize(self.model_, self.specs_, self.device_.c_phy)
        return assignment


def explore_action(rng, specs=None, c_phy: float = 8.0) -> Assignment:
    """Uniform lattice draw; cores rescaled into the budget when oversubscribed."""
    specs = specs or default_specs(c_phy)
    q_cv = int(rng.choice(specs[CV].variable("quality").levels()))
    m_cv = int(rng.choice(specs[CV].variable("model_size").levels()))
    q_qr = int(rng.choice(specs[QR].variable("quality").levels()))
    c = rng.uniform(MIN_CORES, c_phy - MIN_CORES, size=2)
    if c.sum() > c_phy:
        c = np.maximum(c * (c_phy / c.sum()), MIN_CORES)
        # flooring can push the sum back up; take the excess from the larger share
        excess = c.sum() - c_phy
        if excess > 0:
            c[int(np.argmax(c))] -= excess
    return Assignment(q_cv, m_cv, float(c[0]), q_qr, float(c[1]))
