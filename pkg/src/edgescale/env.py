"""Simulated processing environment and the fitted LGBN training environment.

The two services are replaced by a stochastic response surface: throughput
grows linearly with cores and shrinks with the square of the normalized
input quality and with the model size.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .domain import (
    DeviceSpec,
    DomainError,
    ServiceConfig,
    ServiceKind,
    default_specs,
    free_cores,
    validate_config,
)
from .linear import FEATURES, LinearGaussianRegressor, config_row, design
from .monitoring import MetricSample

CV, QR = ServiceKind.CV, ServiceKind.QR

BUDGET_TOL = 1e-9


class BudgetViolation(DomainError):
    def __init__(self, allocations, c_phy):
        total = sum(allocations)
        super().__init__(f"core budget exceeded: {total:.6g} allocated > c_phy {c_phy:g} (by {total - c_phy:.3g})")
        self.total = total
        self.c_phy = c_phy


@dataclass(frozen=True)
class GroundTruthModel:
    kappa_cv: float = 20.0
    kappa_qr: float = 135.0
    noise_sigma: float = 0.05
    q0_cv: float = 128.0
    q0_qr: float = 300.0

    def __post_init__(self):
        if not (self.kappa_cv > 0 and self.kappa_qr > 0):
            raise DomainError("rate constants must be positive")
        if self.noise_sigma < 0:
            raise DomainError("noise_sigma must be non-negative")


def mean_throughput(kind: ServiceKind, config: ServiceConfig, model: GroundTruthModel) -> float:
    """Unclamped noiseless throughput."""
    if kind == CV:
        return model.kappa_cv * config.cores / ((config.quality / model.q0_cv) ** 2 * config.model_size)
    if kind == QR:
        return model.kappa_qr * config.cores / (config.quality / model.q0_qr) ** 2
    raise DomainError(f"unknown service kind {kind!r}")


def ground_truth_throughput(kind, config, model=GroundTruthModel(), noisy=False, rng=None) -> float:
    mu = mean_throughput(kind, config, model)
    if noisy:
        rng = np.random.default_rng(rng)
        mu = mu * (1.0 + model.noise_sigma * rng.standard_normal())
    return float(min(max(mu, 0.0), 100.0))


@dataclass(frozen=True)
class EnvState:
    cv: ServiceConfig
    qr: ServiceConfig
    step_index: int = 0

    def config(self, kind: ServiceKind) -> ServiceConfig:
        return self.cv if kind == CV else self.qr


@dataclass
class StepOutcome:
    samples: list
    free_cores: float


DEFAULT_START = EnvState(
    cv=ServiceConfig(quality=192, model_size=2, cores=2.0),
    qr=ServiceConfig(quality=500, cores=2.0),
)


def check_configs(cv: ServiceConfig, qr: ServiceConfig, device: DeviceSpec) -> None:
    specs = default_specs(device.c_phy)
    validate_config(cv, specs[CV])
    validate_config(qr, specs[QR])
    if free_cores(device, (cv.cores, qr.cores)) < -BUDGET_TOL:
        raise BudgetViolation((cv.cores, qr.cores), device.c_phy)


class ProcessingEnv:
    """Two competing services on one device, advanced in virtual seconds.

    Each ``step`` applies a new configuration and then emits one sample per
    service for every simulated 1-second batch.
    """

    def __init__(self, model: GroundTruthModel = GroundTruthModel(), device: DeviceSpec = DeviceSpec(),
                 start: EnvState = DEFAULT_START, seed=None):
        self.model = model
        self.device = device
        self.start = start
        self.reset(seed)

    def reset(self, seed=None) -> EnvState:
        check_configs(self.start.cv, self.start.qr, self.device)
        self.rng = np.random.default_rng(seed)
        self.state = replace(self.start, step_index=0)
        self.clock = 0.0
        return self.state

    def step(self, cv: Optional[ServiceConfig] = None, qr: Optional[ServiceConfig] = None,
             seconds: int = 5) -> StepOutcome:
        cv = self.state.cv if cv is None else cv
        qr = self.state.qr if qr is None else qr
        check_configs(cv, qr, self.device)
        self.state = EnvState(cv=cv, qr=qr, step_index=self.state.step_index + 1)
        samples = []
        for _ in range(seconds):
            self.clock += 1.0
            for kind, cfg in ((CV, cv), (QR, qr)):
                tp = self._throughput(kind, cfg)
                samples.append(MetricSample(self.clock, kind, cfg.quality, cfg.cores, tp, cfg.model_size))
        return StepOutcome(samples, free_cores(self.device, (cv.cores, qr.cores)))

    def _throughput(self, kind, cfg) -> float:
        return ground_truth_throughput(kind, cfg, self.model, noisy=True, rng=self.rng)


class LgbnModel:
    """Per-service linear Gaussian model of throughput given the configuration."""

    def __init__(self, regressors: Optional[dict] = None):
        self.regressors = regressors or {}

    @classmethod
    def fit(cls, history) -> "LgbnModel":
        regs = {}
        for kind in (CV, QR):
            X, y = design(history, kind)
            regs[kind] = LinearGaussianRegressor(feature_names=FEATURES[kind]).fit(X, y)
        return cls(regs)

    @property
    def fitted(self) -> bool:
        return set(self.regressors) == {CV, QR}

    def coef(self, kind):
        return self.regressors[kind].coef_

    def sigma(self, kind):
        return self.regressors[kind].sigma_

    def mean(self, kind, config: ServiceConfig) -> float:
        coef = self.regressors[kind].coef_
        return float(coef[0] + coef[1:] @ config_row(config, kind))

    def predict(self, kind, config: ServiceConfig) -> float:
        return min(max(self.mean(kind, config), 0.0), 100.0)

    def sample(self, kind, config: ServiceConfig, rng=None) -> float:
        # scalar path of LinearGaussianRegressor.sample, skips input validation
        rng = np.random.default_rng(rng)
        draw = self.mean(kind, config) + self.sigma(kind) * rng.standard_normal()
        return min(max(draw, 0.0), 100.0)


def fit_lgbn(history) -> LgbnModel:
    return LgbnModel.fit(history)


def lgbn_sample(model: LgbnModel, kind: ServiceKind, config: ServiceConfig, rng=None) -> float:
    return model.sample(kind, config, rng)


class LgbnEnv(ProcessingEnv):
    """Training environment: same interface, throughput drawn from a fitted LGBN."""

    def __init__(self, lgbn: LgbnModel, device: DeviceSpec = DeviceSpec(), start: EnvState = DEFAULT_START, seed=None):
        if not lgbn.fitted:
            raise ValueError("LgbnEnv needs a fitted LgbnModel")
        self.lgbn = lgbn
        super().__init__(GroundTruthModel(), device, start, seed)

    def _throughput(self, kind, cfg) -> float:
        return self.lgbn.sample(kind, cfg, self.rng)
