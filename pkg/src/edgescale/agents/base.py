"""Shared agent contract: perceive the services, pick an action, apply it."""

from __future__ import annotations

import enum
import itertools
import time
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from sklearn.base import BaseEstimator

from ..domain import DeviceSpec, ServiceConfig, ServiceKind, default_specs, free_cores, service_fulfillment
from ..monitoring import MetricSample, TimeSeriesStore

CV, QR = ServiceKind.CV, ServiceKind.QR

CORE_STEP = 0.5
MIN_CORES = 0.5
QUALITY_STEP = {CV: 32, QR: 100}


class CvAction(enum.IntEnum):
    QualityDown = 0
    QualityUp = 1
    ModelDown = 2
    ModelUp = 3
    CoresDown = 4
    CoresUp = 5
    NoOp = 6


class QrAction(enum.IntEnum):
    QualityDown = 0
    QualityUp = 1
    CoresDown = 2
    CoresUp = 3
    NoOp = 4


SERVICE_ACTIONS = {CV: tuple(CvAction), QR: tuple(QrAction)}


@dataclass(frozen=True)
class JointAction:
    cv: CvAction
    qr: QrAction

    @property
    def index(self) -> int:
        return int(self.cv) * len(QrAction) + int(self.qr)

    @classmethod
    def from_index(cls, i: int) -> "JointAction":
        return ALL_JOINT_ACTIONS[i]

    def for_service(self, kind: ServiceKind):
        return self.cv if kind == CV else self.qr

    def __str__(self):
        return f"{self.cv.name}/{self.qr.name}"


ALL_JOINT_ACTIONS = tuple(JointAction(c, q) for c, q in itertools.product(CvAction, QrAction))
NOOP = JointAction(CvAction.NoOp, QrAction.NoOp)
N_JOINT = len(ALL_JOINT_ACTIONS)


def core_delta(action) -> float:
    name = action.name
    if name == "CoresUp":
        return CORE_STEP
    if name == "CoresDown":
        return -CORE_STEP
    return 0.0


def apply_service_action(kind: ServiceKind, config: ServiceConfig, action) -> ServiceConfig:
    """Successor configuration, without any bounds handling."""
    name = action.name
    if name == "QualityUp":
        return config.with_(quality=config.quality + QUALITY_STEP[kind])
    if name == "QualityDown":
        return config.with_(quality=config.quality - QUALITY_STEP[kind])
    if name == "ModelUp":
        return config.with_(model_size=config.model_size + 1)
    if name == "ModelDown":
        return config.with_(model_size=config.model_size - 1)
    if name in ("CoresUp", "CoresDown"):
        return config.with_(cores=config.cores + core_delta(action))
    return config


def service_action_legal(kind: ServiceKind, config: ServiceConfig, action) -> bool:
    """Bounds check for one service; the shared core budget is checked jointly."""
    spec = default_specs()[kind]
    nxt = apply_service_action(kind, config, action)
    q = spec.variable("quality")
    if not q.min <= nxt.quality <= q.max:
        return False
    if spec.has_model:
        m = spec.variable("model_size")
        if not m.min <= nxt.model_size <= m.max:
            return False
    return nxt.cores >= MIN_CORES - 1e-9


@dataclass(frozen=True)
class AgentObservation:
    cv: MetricSample
    qr: MetricSample
    phi_cv: float
    phi_qr: float
    c_free: float
    c_phy: float = 8.0

    def snapshot(self, kind: ServiceKind) -> MetricSample:
        return self.cv if kind == CV else self.qr

    def config(self, kind: ServiceKind) -> ServiceConfig:
        s = self.snapshot(kind)
        return ServiceConfig(quality=s.quality, cores=s.cores, model_size=s.model_size)

    def phi(self, kind: ServiceKind) -> float:
        return self.phi_cv if kind == CV else self.phi_qr

    @property
    def phi_mean(self) -> float:
        return (self.phi_cv + self.phi_qr) / 2.0


def make_observation(cv: MetricSample, qr: MetricSample, device: DeviceSpec = DeviceSpec()) -> AgentObservation:
    specs = default_specs(device.c_phy)
    return AgentObservation(
        cv=cv,
        qr=qr,
        phi_cv=service_fulfillment(cv.values(), specs[CV]),
        phi_qr=service_fulfillment(qr.values(), specs[QR]),
        c_free=free_cores(device, (cv.cores, qr.cores)),
        c_phy=device.c_phy,
    )


def perceive(store: TimeSeriesStore, device: DeviceSpec, now: float, window_seconds: float = 5) -> AgentObservation:
    cv = store.window_mean(CV, now, window_seconds)
    qr = store.window_mean(QR, now, window_seconds)
    return make_observation(cv, qr, device)


def joint_legal(obs: AgentObservation, action: JointAction) -> bool:
    if not service_action_legal(CV, obs.config(CV), action.cv):
        return False
    if not service_action_legal(QR, obs.config(QR), action.qr):
        return False
    return core_delta(action.cv) + core_delta(action.qr) <= obs.c_free + 1e-9


def legal_actions(obs: AgentObservation) -> list:
    """Legal joint actions in enumeration order; NoOp/NoOp is always included."""
    return [a for a in ALL_JOINT_ACTIONS if a == NOOP or joint_legal(obs, a)]


def legal_mask(obs: AgentObservation) -> np.ndarray:
    mask = np.zeros(N_JOINT, dtype=bool)
    for a in legal_actions(obs):
        mask[a.index] = True
    return mask


def apply_joint_action(obs: AgentObservation, action: JointAction):
    return (
        apply_service_action(CV, obs.config(CV), action.cv),
        apply_service_action(QR, obs.config(QR), action.qr),
    )


@dataclass(frozen=True)
class Assignment:
    """Full configuration of both services, applied in one go."""

    cv_quality: int
    cv_model_size: int
    cv_cores: float
    qr_quality: int
    qr_cores: float

    def configs(self):
        return (
            ServiceConfig(quality=self.cv_quality, model_size=self.cv_model_size, cores=self.cv_cores),
            ServiceConfig(quality=self.qr_quality, cores=self.qr_cores),
        )


Decision = Union[JointAction, Assignment]


class Agent(BaseEstimator):
    """Base class for scaling agents.

    Constructor arguments are hyperparameters only (``get_params`` /
    ``set_params`` work as for any estimator); learned state is created by
    ``reset``.
    """

    name = "agent"

    def reset(self, device: DeviceSpec = DeviceSpec()):
        self.device_ = device
        self.cycle_ = 0
        return self

    def act(self, obs: AgentObservation) -> Decision:
        raise NotImplementedError

    def decide(self, obs: AgentObservation):
        """Target configurations for both services."""
        decision = self.act(obs)
        self.cycle_ += 1
        if isinstance(decision, Assignment):
            return decision, decision.configs()
        return decision, apply_joint_action(obs, decision)


class NoOpAgent(Agent):
    name = "noop"

    def act(self, obs):
        return NOOP


class RandomAgent(Agent):
    """Uniform over the legal joint actions."""

    name = "random"

    def __init__(self, random_state=None):
        self.random_state = random_state

    def reset(self, device=DeviceSpec()):
        super().reset(device)
        self.rng_ = np.random.default_rng(self.random_state)
        return self

    def act(self, obs):
        legal = legal_actions(obs)
        return legal[int(self.rng_.integers(len(legal)))]


@dataclass
class AgentTelemetry:
    step: int
    cycle_duration_ms: float
    decision: Decision
    observation: AgentObservation
    phi_cv: float
    phi_qr: float

    @property
    def phi_mean(self) -> float:
        return (self.phi_cv + self.phi_qr) / 2.0


class ControlLoop:
    """Couples one agent, one environment and one store.

    ``warm_up`` runs a single window under the starting configuration so the
    first perception has data.
    """

    def __init__(self, agent: Agent, env, store: Optional[TimeSeriesStore] = None, window_seconds: int = 5):
        self.agent = agent
        self.env = env
        self.store = store if store is not None else TimeSeriesStore()
        self.window_seconds = window_seconds
        self.steps = 0

    def warm_up(self):
        self.store.extend(self.env.step(seconds=self.window_seconds).samples)
        return self

    def run_cycle(self) -> AgentTelemetry:
        t0 = time.perf_counter()
        obs = perceive(self.store, self.env.device, self.env.clock, self.window_seconds)
        decision, (cv, qr) = self.agent.decide(obs)
        elapsed = (time.perf_counter() - t0) * 1000.0
        outcome = self.env.step(cv, qr, seconds=self.window_seconds)
        self.store.extend(outcome.samples)
        after = perceive(self.store, self.env.device, self.env.clock, self.window_seconds)
        self.steps += 1
        return AgentTelemetry(self.steps, elapsed, decision, after, after.phi_cv, after.phi_qr)


def run_cycle(agent: Agent, env, store: TimeSeriesStore, window_seconds: int = 5) -> AgentTelemetry:
    loop = ControlLoop(agent, env, store, window_seconds)
    return loop.run_cycle()
