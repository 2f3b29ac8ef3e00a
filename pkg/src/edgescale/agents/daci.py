"""Deep active inference: a latent world model trained on a regularized free energy.

Encoder, transition and decoder are small diagonal-Gaussian MLPs. Training
minimizes, per transition ``(o_prev, a_prev, o_t)``::

    F = E_q[-log p(o_t | s_t)] + KL[q(s_t | o_t) || p(s_t | s_prev, a_prev)]
        + lambda_eq * Var[per-service fulfillment]
        + lambda_util * (1 - used_cores / total_cores) ** 2

The two regularizers depend only on what the environment did, so they add
to the value of F but carry no gradient. Actions are ranked by a one-step
expected free energy: predicted SLO shortfall plus the regularizers, minus
an epistemic bonus for actions on which sampled futures disagree.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..domain import DeviceSpec, ServiceKind, default_specs, service_fulfillment
from ..nn import Adam, Mlp
from .base import ALL_JOINT_ACTIONS, N_JOINT, Agent, apply_joint_action, legal_mask

CV, QR = ServiceKind.CV, ServiceKind.QR

OBS_DIM = 8
LOGVAR_MIN, LOGVAR_MAX = -6.0, 2.0
_LOG_2PI = np.log(2.0 * np.pi)

# (field, lo, hi) for the normalized observation layout; c_phy-relative entries use hi=None
_LAYOUT = (
    ("cv_quality", 128.0, 320.0),
    ("cv_model", 1.0, 5.0),
    ("cv_cores", 0.0, None),
    ("cv_tp", 0.0, 100.0),
    ("qr_quality", 300.0, 1000.0),
    ("qr_cores", 0.0, None),
    ("qr_tp", 0.0, 100.0),
    ("c_free", 0.0, None),
)


def normalize(values, c_phy: float = 8.0) -> np.ndarray:
    """Map raw observation fields (in layout order) onto [0, 1]."""
    v = np.asarray(values, dtype=float)
    out = np.empty_like(v)
    for i, (_, lo, hi) in enumerate(_LAYOUT):
        hi = c_phy if hi is None else hi
        out[..., i] = (v[..., i] - lo) / (hi - lo)
    return out


def denormalize(x, c_phy: float = 8.0) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for i, (_, lo, hi) in enumerate(_LAYOUT):
        hi = c_phy if hi is None else hi
        out[..., i] = lo + x[..., i] * (hi - lo)
    return out


def observation_vector(obs) -> np.ndarray:
    raw = [obs.cv.quality, obs.cv.model_size, obs.cv.cores, obs.cv.throughput,
           obs.qr.quality, obs.qr.cores, obs.qr.throughput, obs.c_free]
    return normalize(raw, obs.c_phy)


def _split(out):
    d = out.shape[-1] // 2
    raw = out[..., d:]
    return out[..., :d], np.clip(raw, LOGVAR_MIN, LOGVAR_MAX), (raw > LOGVAR_MIN) & (raw < LOGVAR_MAX)


def gaussian_kl(mu_q, lv_q, mu_p, lv_p):
    """KL(N(mu_q, e^lv_q) || N(mu_p, e^lv_p)) summed over the last axis."""
    return 0.5 * np.sum(lv_p - lv_q + (np.exp(lv_q) + (mu_q - mu_p) ** 2) / np.exp(lv_p) - 1.0, axis=-1)


def equality_term(fulfillments, lambda_eq):
    return lambda_eq * float(np.var(np.asarray(fulfillments, dtype=float)))


def utilization_term(ucores, tcores, lambda_util):
    return lambda_util * (1.0 - ucores / tcores) ** 2


class DaciNets:
    """Encoder q(s|o), transition p(s'|s, a) and decoder p(o|s)."""

    def __init__(self, obs_dim=OBS_DIM, latent_dim=8, n_actions=N_JOINT, hidden=32, obs_std=0.05, rng=None):
        rng = np.random.default_rng(rng)
        self.obs_dim, self.latent_dim, self.n_actions = obs_dim, latent_dim, n_actions
        self.obs_std = obs_std
        self.encoder = Mlp((obs_dim, hidden, 2 * latent_dim), rng)
        self.transition = Mlp((latent_dim + n_actions, hidden, 2 * latent_dim), rng)
        self.decoder = Mlp((latent_dim, hidden, obs_dim), rng)

    @property
    def nets(self):
        return (self.encoder, self.transition, self.decoder)

    @property
    def params(self):
        return [p for n in self.nets for p in n.params]

    def encode(self, o):
        mu, lv, _ = _split(self.encoder.forward(o))
        return mu, lv

    def transit(self, s, action_idx):
        x = np.concatenate([np.atleast_2d(s), np.eye(self.n_actions)[np.atleast_1d(action_idx)]], axis=-1)
        mu, lv, _ = _split(self.transition.forward(x))
        return mu, lv

    def decode(self, s):
        return self.decoder.forward(s)

    def nll(self, o, o_hat):
        z = (o - o_hat) / self.obs_std
        return np.sum(0.5 * z * z + np.log(self.obs_std) + 0.5 * _LOG_2PI, axis=-1)

    def dumps(self) -> str:
        return "".join(f"[{name}]\n{net.dumps()}" for name, net in
                       zip(("encoder", "transition", "decoder"), self.nets))

    def save(self, path):
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path, obs_std=0.05) -> "DaciNets":
        nets = cls.__new__(cls)
        sections = {}
        for chunk in Path(path).read_text(encoding="utf-8").split("[")[1:]:
            head, body = chunk.split("]\n", 1)
            sections[head] = Mlp.loads(body)
        nets.encoder, nets.transition, nets.decoder = (sections[k] for k in ("encoder", "transition", "decoder"))
        nets.obs_dim = nets.encoder.sizes[0]
        nets.latent_dim = nets.decoder.sizes[0]
        nets.n_actions = nets.transition.sizes[0] - nets.latent_dim
        nets.obs_std = obs_std
        return nets


@dataclass(frozen=True)
class DaciTransition:
    o_prev: np.ndarray
    action: int
    o: np.ndarray
    fulfillments: tuple
    ucores: float
    tcores: float


def free_energy(nets: DaciNets, batch, lambda_eq=0.5, lambda_util=0.1, eps=None, rng=None, grad=True):
    """Mean F over ``batch``.

    Returns ``(F, learnable, grads)``: ``learnable`` is the reconstruction
    plus KL part (what gradients act on); ``grads`` is aligned with
    ``nets.params`` or None when ``grad`` is False. ``eps`` fixes the
    reparameterization noise, shape ``(len(batch), latent_dim)``.
    """
    n = len(batch)
    o = np.stack([t.o for t in batch])
    o_prev = np.stack([t.o_prev for t in batch])
    acts = np.array([t.action for t in batch])
    if eps is None:
        eps = np.random.default_rng(rng).standard_normal((n, nets.latent_dim))
    d = nets.latent_dim

    enc_out = nets.encoder.forward(np.concatenate([o, o_prev]))
    mu_all, lv_all, live_all = _split(enc_out)
    mu_q, lv_q, mu_prev = mu_all[:n], lv_all[:n], mu_all[n:]
    std_q = np.exp(0.5 * lv_q)
    s = mu_q + std_q * eps

    o_hat = nets.decoder.forward(s)
    nll = nets.nll(o, o_hat)

    x_tr = np.concatenate([mu_prev, np.eye(nets.n_actions)[acts]], axis=1)
    tr_out = nets.transition.forward(x_tr)
    mu_p, lv_p, live_p = _split(tr_out)
    kl = gaussian_kl(mu_q, lv_q, mu_p, lv_p)

    reg = np.array([equality_term(t.fulfillments, lambda_eq) + utilization_term(t.ucores, t.tcores, lambda_util)
                    for t in batch])
    learnable = float(np.mean(nll + kl))
    total = learnable + float(np.mean(reg))
    if not grad:
        return total, learnable, None

    # decoder
    d_ohat = (o_hat - o) / nets.obs_std ** 2 / n
    ds, g_dec = nets.decoder.backward(d_ohat)
    # KL terms
    var_p = np.exp(lv_p)
    diff = mu_q - mu_p
    d_mu_q = ds + diff / var_p / n
    d_lv_q = ds * eps * 0.5 * std_q + 0.5 * (np.exp(lv_q) / var_p - 1.0) / n
    d_mu_p = -diff / var_p / n
    d_lv_p = 0.5 * (1.0 - (np.exp(lv_q) + diff ** 2) / var_p) / n
    d_tr_out = np.concatenate([d_mu_p, d_lv_p * live_p], axis=1)
    d_x_tr, g_tr = nets.transition.backward(d_tr_out)
    d_mu_prev = d_x_tr[:, :d]
    # encoder, both halves of the stacked batch
    d_enc = np.zeros_like(enc_out)
    d_enc[:n, :d] = d_mu_q
    d_enc[:n, d:] = d_lv_q * live_all[:n]
    d_enc[n:, :d] = d_mu_prev
    _, g_enc = nets.encoder.backward(d_enc)
    return total, learnable, g_enc + g_tr + g_dec


def _phi_from_fields(cv_q, cv_m, cv_tp, qr_q, qr_tp, specs):
    cv = service_fulfillment({"quality": cv_q, "model_size": cv_m, "throughput": cv_tp}, specs[CV])
    qr = service_fulfillment({"quality": qr_q, "throughput": qr_tp}, specs[QR])
    return cv, qr


def efe_scores(nets: DaciNets, obs, actions, lambda_eq=0.5, lambda_util=0.1, beta_epi=1.0, k_samples=8,
               rng=None, eps=None):
    """One-step expected free energy for each of ``actions`` (lower is better).

    Throughput comes from decoding K sampled next latents; configuration
    fields and core usage come from the known effect of each action.
    """
    specs = default_specs(obs.c_phy)
    rng = np.random.default_rng(rng)
    mu, _ = nets.encode(observation_vector(obs)[None])
    idx = np.array([a.index for a in actions])
    mu_p, lv_p = nets.transit(np.repeat(mu, len(actions), axis=0), idx)
    if eps is None:
        eps = rng.standard_normal((k_samples, nets.latent_dim))
    s = mu_p[:, None, :] + np.exp(0.5 * lv_p)[:, None, :] * eps[None]
    o_hat = nets.decode(s.reshape(-1, nets.latent_dim)).reshape(len(actions), k_samples, -1)
    raw = denormalize(o_hat, obs.c_phy)
    cv_tp = np.clip(raw[..., 3], 0.0, 100.0)
    qr_tp = np.clip(raw[..., 6], 0.0, 100.0)

    scores = np.empty(len(actions))
    for i, a in enumerate(actions):
        cv, qr = apply_joint_action(obs, a)
        ucores = cv.cores + qr.cores
        util = utilization_term(ucores, obs.c_phy, lambda_util)
        prag = 0.0
        for k in range(k_samples):
            f = _phi_from_fields(cv.quality, cv.model_size, cv_tp[i, k], qr.quality, qr_tp[i, k], specs)
            prag += (1.0 - (f[0] + f[1]) / 2.0) + equality_term(f, lambda_eq) + util
        prag /= k_samples
        m = o_hat[i]
        sq = ((m[:, None, :] - m[None, :, :]) ** 2).sum(-1)
        disagreement = sq.sum() / (k_samples * (k_samples - 1)) if k_samples > 1 else 0.0
        scores[i] = prag - beta_epi * disagreement
    return scores


class DaciAgent(Agent):
    """Deep active inference agent with online model learning.

    Parameters
    ----------
    lambda_eq, lambda_util : float
        Weights of the fulfillment-balance and core-utilization regularizers.
    beta_epi : float
        Weight of the epistemic (sample disagreement) bonus.
    k_samples : int
        Monte-Carlo latent samples per candidate action.
    lr : float
        Adam step size.
    batch_size, replay_capacity : int
        Online replay settings.
    train_steps : int
        Gradient updates per control cycle.
    latent_dim, hidden : int
        Network sizes.
    random_state : int or None
    """

    name = "daci"

    def __init__(self, lambda_eq=0.5, lambda_util=0.1, beta_epi=1.0, k_samples=8, lr=1e-2, batch_size=32,
                 replay_capacity=5000, train_steps=1, latent_dim=8, hidden=32, random_state=None):
        self.lambda_eq = lambda_eq
        self.lambda_util = lambda_util
        self.beta_epi = beta_epi
        self.k_samples = k_samples
        self.lr = lr
        self.batch_size = batch_size
        self.replay_capacity = replay_capacity
        self.train_steps = train_steps
        self.latent_dim = latent_dim
        self.hidden = hidden
        self.random_state = random_state

    def reset(self, device=DeviceSpec()):
        super().reset(device)
        self.rng_ = np.random.default_rng(self.random_state)
        self.nets_ = DaciNets(latent_dim=self.latent_dim, hidden=self.hidden, rng=self.rng_)
        self.opt_ = Adam(self.lr)
        self.replay_ = deque(maxlen=self.replay_capacity)
        self.prev_ = None
        self.losses_ = []
        return self

    def train_step(self, batch) -> float:
        total, _, grads = free_energy(self.nets_, batch, self.lambda_eq, self.lambda_util, rng=self.rng_)
        self.opt_.step(self.nets_.params, grads)
        return total

    def learn(self, obs):
        if self.prev_ is None:
            return
        o_prev, a = self.prev_
        self.replay_.append(DaciTransition(
            o_prev, a, observation_vector(obs), (obs.phi_cv, obs.phi_qr),
            obs.cv.cores + obs.qr.cores, obs.c_phy,
        ))
        for _ in range(self.train_steps):
            n = min(self.batch_size, len(self.replay_))
            pick = self.rng_.choice(len(self.replay_), size=n, replace=False)
            self.losses_.append(self.train_step([self.replay_[i] for i in pick]))

    def scores(self, obs) -> np.ndarray:
        """Expected free energy of all 35 joint actions; illegal ones are +inf."""
        mask = legal_mask(obs)
        legal = [a for a, ok in zip(ALL_JOINT_ACTIONS, mask) if ok]
        g = np.full(N_JOINT, np.inf)
        g[mask] = efe_scores(self.nets_, obs, legal, self.lambda_eq, self.lambda_util, self.beta_epi,
                             self.k_samples, self.rng_)
        return g

    def select_action(self, obs):
        return ALL_JOINT_ACTIONS[int(np.argmin(self.scores(obs)))]

    def act(self, obs):
        self.learn(obs)
        action = self.select_action(obs)
        self.prev_ = (observation_vector(obs), action.index)
        return action
