"""Tabular active inference over a factored, binned state space.

The seven monitored factors are observed exactly (identity likelihood), so
only the throughput dynamics are uncertain. Those are Dirichlet count
tables indexed by the service configuration, starting from a uniform
pseudo-count. Each cycle the agent scores all 35 one-step joint actions by
expected free energy, computed in one batched pass.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from ..domain import DeviceSpec, DomainError, ServiceKind, default_specs, slo_fulfillment
from .base import (
    ALL_JOINT_ACTIONS,
    CORE_STEP,
    MIN_CORES,
    Agent,
    apply_joint_action,
    legal_mask,
)

CV, QR = ServiceKind.CV, ServiceKind.QR


@dataclass(frozen=True)
class FactorSpec:
    cv_quality: tuple = tuple(range(128, 321, 32))
    cv_model: tuple = (1, 2, 3, 4, 5)
    cores: tuple = tuple(CORE_STEP * k for k in range(1, 15))
    cv_tp_edges: tuple = (0.0, 1.0, 2.5, 5.0, 10.0, 25.0, 100.0)
    qr_quality: tuple = tuple(range(300, 1001, 100))
    qr_tp_edges: tuple = (0.0, 15.0, 30.0, 45.0, 60.0, 80.0, 100.0)

    def __post_init__(self):
        for edges in (self.cv_tp_edges, self.qr_tp_edges):
            if any(b <= a for a, b in zip(edges, edges[1:])):
                raise DomainError("bin edges must be strictly increasing")

    def quality_levels(self, kind):
        return self.cv_quality if kind == CV else self.qr_quality

    def tp_edges(self, kind):
        return self.cv_tp_edges if kind == CV else self.qr_tp_edges

    @property
    def cardinalities(self) -> tuple:
        n_tp = len(self.cv_tp_edges) - 1
        return (len(self.cv_quality), len(self.cv_model), len(self.cores), n_tp,
                len(self.qr_quality), len(self.cores), len(self.qr_tp_edges) - 1)

    @property
    def n_states(self) -> int:
        return int(np.prod(self.cardinalities))

    def tp_midpoints(self, kind) -> np.ndarray:
        e = np.asarray(self.tp_edges(kind))
        return (e[:-1] + e[1:]) / 2.0


def _level_index(levels, value, what):
    for i, v in enumerate(levels):
        if abs(v - value) < 1e-9:
            return i
    raise DomainError(f"{what}={value} is not one of {levels}")


def tp_bin(edges, value) -> int:
    """Bins are ``[lo, hi)`` except the last, which is closed."""
    if not edges[0] <= value <= edges[-1]:
        raise DomainError(f"throughput {value} outside [{edges[0]}, {edges[-1]}]")
    i = int(np.searchsorted(edges, value, side="right")) - 1
    return min(i, len(edges) - 2)


def cores_bin(factors: FactorSpec, cores: float) -> int:
    if not cores > 0:
        raise DomainError(f"cores={cores} must be positive")
    # nearest 0.5 step; allocations above the top bin share it
    i = int(np.floor(cores / CORE_STEP + 0.5)) - 1
    return min(max(i, 0), len(factors.cores) - 1)


def discretize(obs, factors: FactorSpec = FactorSpec()) -> tuple:
    """Factor indices (cv_q, cv_m, cv_c, cv_tp, qr_q, qr_c, qr_tp)."""
    cv, qr = obs.cv, obs.qr
    return (
        _level_index(factors.cv_quality, cv.quality, "CV quality"),
        _level_index(factors.cv_model, cv.model_size, "CV model_size"),
        cores_bin(factors, cv.cores),
        tp_bin(factors.cv_tp_edges, cv.throughput),
        _level_index(factors.qr_quality, qr.quality, "QR quality"),
        cores_bin(factors, qr.cores),
        tp_bin(factors.qr_tp_edges, qr.throughput),
    )


class DirichletCpt:
    """Throughput counts per configuration row: ``counts[kind][..., tp_bin]``."""

    def __init__(self, factors: FactorSpec = FactorSpec(), alpha0: float = 1.0):
        self.factors = factors
        self.alpha0 = alpha0
        n_c = len(factors.cores)
        self.counts = {
            CV: np.full((len(factors.cv_quality), len(factors.cv_model), n_c, len(factors.cv_tp_edges) - 1), alpha0),
            QR: np.full((len(factors.qr_quality), n_c, len(factors.qr_tp_edges) - 1), alpha0),
        }

    def rows(self, kind, index):
        """Count rows for a (possibly batched) configuration index tuple."""
        return self.counts[kind][index]

    def predictive(self, kind, index):
        r = self.rows(kind, index)
        return r / r.sum(axis=-1, keepdims=True)

    def update(self, kind, index, tp_idx: int, amount: float = 1.0):
        self.counts[kind][tuple(index) + (tp_idx,)] += amount

    def dump(self, path) -> int:
        n = 0
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("service", "q_idx", "m_idx", "c_idx", "tp_idx", "count"))
            for kind in (CV, QR):
                for idx, count in np.ndenumerate(self.counts[kind]):
                    if kind == CV:
                        q, m, c, t = idx
                    else:
                        (q, c, t), m = idx, ""
                    w.writerow((kind.value, q, m, c, t, repr(float(count))))
                    n += 1
        return n

    @classmethod
    def load(cls, path, factors: FactorSpec = FactorSpec(), alpha0: float = 1.0) -> "DirichletCpt":
        cpt = cls(factors, alpha0)
        with Path(path).open(newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                kind = ServiceKind(row["service"])
                if kind == CV:
                    idx = (int(row["q_idx"]), int(row["m_idx"]), int(row["c_idx"]), int(row["tp_idx"]))
                else:
                    idx = (int(row["q_idx"]), int(row["c_idx"]), int(row["tp_idx"]))
                cpt.counts[kind][idx] = float(row["count"])
        return cpt


class PreferenceModel:
    """Log-preferences ``eta * phi(bin value)`` for each SLO-carrying factor."""

    def __init__(self, factors: FactorSpec = FactorSpec(), eta: float = 4.0, c_phy: float = 8.0):
        specs = default_specs(c_phy)
        slo = {(k, q.variable): q for k in (CV, QR) for q in specs[k].slos}
        self.eta = eta
        self.cv_quality = eta * np.array([slo_fulfillment(v, slo[(CV, "quality")]) for v in factors.cv_quality])
        self.cv_model = eta * np.array([slo_fulfillment(v, slo[(CV, "model_size")]) for v in factors.cv_model])
        self.qr_quality = eta * np.array([slo_fulfillment(v, slo[(QR, "quality")]) for v in factors.qr_quality])
        self.tp = {
            k: eta * np.array([slo_fulfillment(v, slo[(k, "throughput")]) for v in factors.tp_midpoints(k)])
            for k in (CV, QR)
        }
        self.cores = np.zeros(len(factors.cores))

    def log_target(self, c):
        """Log of the softmax of a preference vector."""
        return c - logsumexp(c)


def kl_categorical(p, log_q):
    """KL(p || q) along the last axis, with q given as log-probabilities."""
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return plogp.sum(-1) - (p * log_q).sum(-1)


def novelty(row_totals, n_bins):
    """Expected information gain of one more count in a Dirichlet row.

    With the usual ``0.5 * (1/a_k - 1/a_0)`` parameter-novelty weights and the
    predictive ``a_k / a_0``, the expectation collapses to a function of the
    row total only.
    """
    return 0.5 * (n_bins - 1) / row_totals


def expected_free_energy(successors, cpt: DirichletCpt, prefs: PreferenceModel, novelty_weight: float = 1.0):
    """G for a batch of successor configurations (lower is better).

    ``successors`` holds integer arrays ``cv_q, cv_m, cv_c, qr_q, qr_c`` with
    one entry per candidate action. Controllable factors move
    deterministically, so their risk is ``-log softmax(C)`` at the successor
    level; throughput risk is the KL between the predicted row and the
    softened preference.
    """
    cv_q, cv_m, cv_c, qr_q, qr_c = (successors[k] for k in ("cv_q", "cv_m", "cv_c", "qr_q", "qr_c"))
    g = -prefs.log_target(prefs.cv_quality)[cv_q]
    g = g - prefs.log_target(prefs.cv_model)[cv_m]
    g = g - prefs.log_target(prefs.qr_quality)[qr_q]
    g = g - prefs.log_target(prefs.cores)[cv_c] - prefs.log_target(prefs.cores)[qr_c]
    risk_tp = 0.0
    nov = 0.0
    for kind, index in ((CV, (cv_q, cv_m, cv_c)), (QR, (qr_q, qr_c))):
        rows = cpt.rows(kind, index)
        totals = rows.sum(-1)
        p = rows / totals[:, None]
        risk_tp = risk_tp + kl_categorical(p, prefs.log_target(prefs.tp[kind]))
        nov = nov + novelty(totals, rows.shape[-1])
    return g + risk_tp - novelty_weight * nov


class AifAgent(Agent):
    """Active inference scaling agent with learned throughput tables.

    Parameters
    ----------
    eta : float
        Precision of the SLO preferences.
    alpha0 : float
        Uniform Dirichlet pseudo-count of every throughput row.
    novelty_weight : float
        Scale of the parameter-information-gain term.
    """

    name = "aif"

    def __init__(self, eta=4.0, alpha0=1.0, novelty_weight=1.0):
        self.eta = eta
        self.alpha0 = alpha0
        self.novelty_weight = novelty_weight

    def reset(self, device=DeviceSpec()):
        super().reset(device)
        self.factors_ = FactorSpec(cores=tuple(CORE_STEP * k for k in range(1, 15)))
        self.cpt_ = DirichletCpt(self.factors_, self.alpha0)
        self.prefs_ = PreferenceModel(self.factors_, self.eta, device.c_phy)
        return self

    def update(self, obs):
        """Count the observed throughput bin against the configuration that produced it."""
        idx = discretize(obs, self.factors_)
        self.cpt_.update(CV, idx[0:3], idx[3])
        self.cpt_.update(QR, idx[4:6], idx[6])
        return idx

    def successors(self, obs, actions=ALL_JOINT_ACTIONS):
        f = self.factors_
        out = {k: np.empty(len(actions), dtype=int) for k in ("cv_q", "cv_m", "cv_c", "qr_q", "qr_c")}
        for i, a in enumerate(actions):
            cv, qr = apply_joint_action(obs, a)
            out["cv_q"][i] = _level_index(f.cv_quality, min(max(cv.quality, f.cv_quality[0]), f.cv_quality[-1]), "q")
            out["cv_m"][i] = min(max(cv.model_size, f.cv_model[0]), f.cv_model[-1]) - f.cv_model[0]
            out["cv_c"][i] = cores_bin(f, max(cv.cores, MIN_CORES))
            out["qr_q"][i] = _level_index(f.qr_quality, min(max(qr.quality, f.qr_quality[0]), f.qr_quality[-1]), "q")
            out["qr_c"][i] = cores_bin(f, max(qr.cores, MIN_CORES))
        return out

    def scores(self, obs) -> np.ndarray:
        """G for all 35 joint actions; illegal ones are +inf."""
        g = expected_free_energy(self.successors(obs), self.cpt_, self.prefs_, self.novelty_weight)
        return np.where(legal_mask(obs), g, np.inf)

    def select_action(self, obs):
        return ALL_JOINT_ACTIONS[int(np.argmin(self.scores(obs)))]

    def act(self, obs):
        self.update(obs)
        return self.select_action(obs)
