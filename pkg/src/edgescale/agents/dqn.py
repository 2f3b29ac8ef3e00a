"""Per-service deep Q-networks, pretrained in the LGBN environment."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..domain import DeviceSpec, ServiceConfig, ServiceKind, default_specs, service_fulfillment
from ..env import EnvState, LgbnEnv, LgbnModel, ProcessingEnv
from ..monitoring import TimeSeriesStore
from ..nn import Mlp, Sgd
from .base import (
    CORE_STEP,
    SERVICE_ACTIONS,
    Agent,
    ControlLoop,
    JointAction,
    RandomAgent,
    apply_service_action,
    core_delta,
    perceive,
    service_action_legal,
)

CV, QR = ServiceKind.CV, ServiceKind.QR
KINDS = (CV, QR)


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool
    next_mask: np.ndarray


class ReplayBuffer:
    def __init__(self, capacity: int = 50_000):
        self.items = deque(maxlen=capacity)

    def __len__(self):
        return len(self.items)

    def push(self, t: Transition) -> None:
        self.items.append(t)

    def sample(self, n: int, rng) -> list:
        """Uniform draw without replacement."""
        idx = rng.choice(len(self.items), size=min(n, len(self.items)), replace=False)
        return [self.items[i] for i in idx]


@dataclass
class DqnConfig:
    lr: float = 3e-2
    gamma: float = 0.9
    batch_size: int = 64
    target_sync: int = 200
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_deploy: float = 0.05
    episodes: int = 300
    episode_steps: int = 25
    buffer_capacity: int = 50_000
    hidden: tuple = (64, 64)

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        for eps in (self.eps_start, self.eps_end, self.eps_deploy):
            if not 0 <= eps <= 1:
                raise ValueError("epsilon must lie in [0, 1]")


_RANGES = {
    CV: (("quality", 128, 320), ("model_size", 1, 5)),
    QR: (("quality", 300, 1000),),
}


def encode_state(kind: ServiceKind, obs) -> np.ndarray:
    """Min-max normalized (config..., cores, throughput, c_free) for one service."""
    s = obs.snapshot(kind)
    out = [(getattr(s, name) - lo) / (hi - lo) for name, lo, hi in _RANGES[kind]]
    out += [s.cores / obs.c_phy, s.throughput / 100.0, obs.c_free / obs.c_phy]
    return np.array(out)


def decode_state(kind: ServiceKind, vec, c_phy: float = 8.0) -> dict:
    out = {name: lo + v * (hi - lo) for (name, lo, hi), v in zip(_RANGES[kind], vec)}
    k = len(_RANGES[kind])
    out["cores"] = vec[k] * c_phy
    out["throughput"] = vec[k + 1] * 100.0
    out["c_free"] = vec[k + 2] * c_phy
    return out


def state_dim(kind):
    return len(_RANGES[kind]) + 3


def reward(kind: ServiceKind, obs) -> float:
    return service_fulfillment(obs.snapshot(kind).values(), default_specs(obs.c_phy)[kind])


def individual_mask(kind, obs) -> np.ndarray:
    """Actions legal for one service alone, including its own core claim."""
    cfg = obs.config(kind)
    return np.array([
        service_action_legal(kind, cfg, a) and core_delta(a) <= obs.c_free + 1e-9
        for a in SERVICE_ACTIONS[kind]
    ])


def q_forward(net: Mlp, state) -> np.ndarray:
    return net.forward(state)


def train_step(net: Mlp, target: Mlp, batch, gamma: float, optimizer) -> float:
    """One SGD step on the mean squared TD error; returns the pre-update loss."""
    s = np.stack([t.state for t in batch])
    a = np.array([t.action for t in batch])
    r = np.array([t.reward for t in batch])
    s2 = np.stack([t.next_state for t in batch])
    done = np.array([t.done for t in batch])
    mask = np.stack([t.next_mask for t in batch])
    q2 = np.where(mask, target.forward(s2), -np.inf).max(1)
    y = r + np.where(done, 0.0, gamma * q2)
    q = net.forward(s)
    n = len(batch)
    err = q[np.arange(n), a] - y
    dq = np.zeros_like(q)
    dq[np.arange(n), a] = 2.0 * err / n
    _, grads = net.backward(dq)
    optimizer.step(net.params, grads)
    return float(np.mean(err ** 2))


def _epsilon_greedy(q, mask, eps, rng):
    legal = np.flatnonzero(mask)
    if rng.random() < eps:
        return int(legal[rng.integers(len(legal))])
    return int(legal[np.argmax(q[legal])])


def select_action(nets: dict, obs, eps: float, rng) -> JointAction:
    """Epsilon-greedy per service, then settle a joint overdraw of cores.

    When both picks together claim more than ``c_free``, the service whose
    pick has the smaller advantage over its own NoOp falls back to NoOp.
    """
    picks, adv = {}, {}
    for kind in KINDS:
        q = q_forward(nets[kind], encode_state(kind, obs))
        a = _epsilon_greedy(q, individual_mask(kind, obs), eps, rng)
        picks[kind] = a
        adv[kind] = q[a] - q[len(SERVICE_ACTIONS[kind]) - 1]
    cv_a, qr_a = SERVICE_ACTIONS[CV][picks[CV]], SERVICE_ACTIONS[QR][picks[QR]]
    if core_delta(cv_a) + core_delta(qr_a) > obs.c_free + 1e-9:
        if adv[CV] < adv[QR]:
            cv_a = SERVICE_ACTIONS[CV][-1]
        else:
            qr_a = SERVICE_ACTIONS[QR][-1]
    return JointAction(cv_a, qr_a)


def random_start(rng, c_phy: float = 8.0) -> EnvState:
    specs = default_specs(c_phy)
    n_steps = int(round(c_phy / CORE_STEP))
    while True:
        k = rng.integers(1, n_steps, size=2)
        if k.sum() <= n_steps:
            break
    cv = ServiceConfig(
        quality=int(rng.choice(specs[CV].variable("quality").levels())),
        model_size=int(rng.choice(specs[CV].variable("model_size").levels())),
        cores=float(k[0] * CORE_STEP),
    )
    qr = ServiceConfig(quality=int(rng.choice(specs[QR].variable("quality").levels())), cores=float(k[1] * CORE_STEP))
    return EnvState(cv, qr)


def bootstrap_lgbn(env: ProcessingEnv, cycles: int = 100, seed=None) -> LgbnModel:
    """Random-walk data collection on ``env`` followed by an LGBN fit."""
    loop = ControlLoop(RandomAgent(random_state=seed).reset(env.device), env).warm_up()
    for _ in range(cycles):
        loop.run_cycle()
    return LgbnModel.fit(loop.store.samples())


class DqnAgent(Agent):
    """Two independent Q-networks (CV, QR) acting on one shared core budget.

    Parameters mirror :class:`DqnConfig`; ``random_state`` seeds weight
    initialization, pretraining and exploration.
    """

    name = "dqn"

    def __init__(self, lr=3e-2, gamma=0.9, batch_size=64, target_sync=200, eps_start=1.0, eps_end=0.05,
                 eps_deploy=0.05, episodes=300, episode_steps=25, buffer_capacity=50_000, hidden=(64, 64),
                 random_state=None):
        self.lr = lr
        self.gamma = gamma
        self.batch_size = batch_size
        self.target_sync = target_sync
        self.eps_start = eps_start
        self.eps_end = eps_end
        self.eps_deploy = eps_deploy
        self.episodes = episodes
        self.episode_steps = episode_steps
        self.buffer_capacity = buffer_capacity
        self.hidden = hidden
        self.random_state = random_state

    @property
    def config(self) -> DqnConfig:
        return DqnConfig(self.lr, self.gamma, self.batch_size, self.target_sync, self.eps_start, self.eps_end,
                         self.eps_deploy, self.episodes, self.episode_steps, self.buffer_capacity,
                         tuple(self.hidden))

    def reset(self, device=DeviceSpec()):
        super().reset(device)
        self.rng_ = np.random.default_rng(self.random_state)
        if getattr(self, "pretrained_", None) is None:
            self.nets_ = {k: Mlp((state_dim(k),) + tuple(self.hidden) + (len(SERVICE_ACTIONS[k]),), self.rng_)
                          for k in KINDS}
        else:
            self.nets_ = {k: n.copy() for k, n in self.pretrained_.items()}
        self.epsilon_ = self.eps_deploy
        return self

    def use_pretrained(self, nets: dict):
        """Start every later ``reset`` from copies of ``nets``."""
        self.pretrained_ = {k: n.copy() for k, n in nets.items()}
        return self

    def act(self, obs):
        return select_action(self.nets_, obs, self.epsilon_, self.rng_)

    def pretrain(self, lgbn: LgbnModel, seed=None):
        """Train both nets in the LGBN environment; returns mean reward per episode."""
        nets, curve = pretrain(self.nets_, lgbn, self.config, seed=seed, device=self.device_)
        self.nets_ = nets
        self.use_pretrained(nets)
        return curve

    def save(self, path) -> None:
        save_checkpoint(self.nets_, path)


def load_checkpoint(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    nets = {}
    for chunk in text.split("[")[1:]:
        head, body = chunk.split("]\n", 1)
        nets[ServiceKind(head)] = Mlp.loads(body)
    if set(nets) != set(KINDS):
        raise ValueError(f"{path}: checkpoint must hold CV and QR nets")
    return nets


def save_checkpoint(nets: dict, path) -> None:
    Path(path).write_text("".join(f"[{k.value}]\n" + nets[k].dumps() for k in KINDS), encoding="utf-8")


def pretrain(nets: dict, lgbn: LgbnModel, config: DqnConfig = DqnConfig(), seed=None, device=DeviceSpec()):
    """Joint episodes in the LGBN environment with exponentially annealed epsilon.

    Returns ``(nets, curve)`` where ``curve[e]`` is the mean per-step reward
    (averaged over both services) of episode ``e``.
    """
    if lgbn is None or not lgbn.fitted:
        raise ValueError("pretraining needs a fitted LGBN")
    nets = {k: n.copy() for k, n in nets.items()}
    targets = {k: n.copy() for k, n in nets.items()}
    buffers = {k: ReplayBuffer(config.buffer_capacity) for k in KINDS}
    opt = {k: Sgd(config.lr) for k in KINDS}
    rng = np.random.default_rng(seed)
    env = LgbnEnv(lgbn, device, seed=rng.integers(2**32))
    n_train = 0
    curve = []
    E = config.episodes
    for e in range(E):
        frac = e / (E - 1) if E > 1 else 1.0
        eps = config.eps_start * (config.eps_end / config.eps_start) ** frac if config.eps_start > 0 else 0.0
        env.start = random_start(rng, device.c_phy)
        env.reset(rng.integers(2**32))
        store = TimeSeriesStore(capacity=64)
        store.extend(env.step(seconds=5).samples)
        obs = perceive(store, device, env.clock)
        total = 0.0
        for _ in range(config.episode_steps):
            action = select_action(nets, obs, eps, rng)
            cv = apply_service_action(CV, obs.config(CV), action.cv)
            qr = apply_service_action(QR, obs.config(QR), action.qr)
            store.extend(env.step(cv, qr).samples)
            nxt = perceive(store, device, env.clock)
            for kind in KINDS:
                r = reward(kind, nxt)
                total += r / 2.0
                buffers[kind].push(Transition(
                    encode_state(kind, obs), int(action.for_service(kind)), r,
                    encode_state(kind, nxt), False, individual_mask(kind, nxt),
                ))
            if len(buffers[CV]) >= config.batch_size:
                for kind in KINDS:
                    train_step(nets[kind], targets[kind], buffers[kind].sample(config.batch_size, rng),
                               config.gamma, opt[kind])
                n_train += 1
                if n_train % config.target_sync == 0:
                    for kind in KINDS:
                        targets[kind].load_params(nets[kind])
            obs = nxt
        curve.append(total / config.episode_steps)
    return nets, np.array(curve)

