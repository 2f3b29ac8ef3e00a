"""Experiment protocol: repeated closed-loop runs, CSV records and summaries."""

from __future__ import annotations

import ast
import csv
import logging
import math
import statistics
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .agents.aif import AifAgent
from .agents.ask import AskAgent
from .agents.base import ControlLoop, NoOpAgent, RandomAgent
from .agents.daci import DaciAgent
from .agents.dqn import DqnAgent, bootstrap_lgbn, load_checkpoint
from .domain import DeviceSpec
from .env import GroundTruthModel, ProcessingEnv
from .monitoring import TimeSeriesStore

log = logging.getLogger(__name__)

AGENTS = {
    "aif": AifAgent,
    "dqn": DqnAgent,
    "daci": DaciAgent,
    "ask": AskAgent,
    "noop": NoOpAgent,
    "random": RandomAgent,
}

RECORD_FIELDS = ("run_id", "agent", "step", "phi_cv", "phi_qr", "phi_mean", "cycle_ms",
                 "cv_quality", "cv_model", "cv_cores", "qr_quality", "qr_cores")
TIMING_FIELDS = ("run_id", "step", "cycle_ms")
SUMMARY_FIELDS = ("agent", "runs", "final10_mean", "final10_std", "cycle_ms_mean", "cycle_ms_median",
                  "cycle_ms_p99", "convergence_step")
CYCLE_SECONDS = 5
FINAL_WINDOW = 10


class ConfigError(ValueError):
    pass


class MissingCheckpoint(RuntimeError):
    pass


@dataclass
class ExperimentSpec:
    agent: str = "ask"
    iterations: int = 50
    repetitions: int = 10
    seed: int = 0
    mode: str = "fast"
    env: dict = field(default_factory=dict)
    agent_params: dict = field(default_factory=dict)
    out: Optional[Path] = None
    checkpoint: Optional[Path] = None
    require_pretrained: bool = False

    def __post_init__(self):
        if self.agent not in AGENTS:
            raise ConfigError(f"unknown agent {self.agent!r}; choose from {', '.join(AGENTS)}")
        if self.iterations < 1 or self.repetitions < 1:
            raise ConfigError("iterations and repetitions must be >= 1")
        if self.mode not in ("fast", "realtime"):
            raise ConfigError(f"mode must be fast or realtime, got {self.mode!r}")
        unknown = set(self.env) - {"kappa_cv", "kappa_qr", "noise_sigma", "c_phy"}
        if unknown:
            raise ConfigError(f"unknown env settings: {', '.join(sorted(unknown))}")

    def ground_truth(self) -> GroundTruthModel:
        keys = {f.name for f in fields(GroundTruthModel)}
        return GroundTruthModel(**{k: v for k, v in self.env.items() if k in keys})

    def device(self) -> DeviceSpec:
        return DeviceSpec(c_phy=float(self.env.get("c_phy", 8.0)))


@dataclass(frozen=True)
class RunRecord:
    run_id: str
    agent: str
    step: int
    phi_cv: float
    phi_qr: float
    phi_mean: float
    cycle_ms: float
    cv_quality: int
    cv_model: int
    cv_cores: float
    qr_quality: int
    qr_cores: float


@dataclass(frozen=True)
class AgentSummary:
    agent: str
    runs: int
    final10_mean: float
    final10_std: float
    cycle_ms_mean: float
    cycle_ms_median: float
    cycle_ms_p99: float
    convergence_step: float


@dataclass
class SummaryReport:
    agents: list

    def by_agent(self, name) -> AgentSummary:
        return next(a for a in self.agents if a.agent == name)

    def speed_ordering(self) -> list:
        return [a.agent for a in sorted(self.agents, key=lambda a: a.cycle_ms_mean)]

    def table(self) -> str:
        head = f"{'agent':<8}{'runs':>5}{'final10 phi':>18}{'cycle ms (mean/median/p99)':>32}{'converged@':>12}"
        lines = [head, "-" * len(head)]
        for a in self.agents:
            phi = f"{a.final10_mean:.3f} ± {a.final10_std:.3f}"
            ms = f"{a.cycle_ms_mean:.2f} / {a.cycle_ms_median:.2f} / {a.cycle_ms_p99:.2f}"
            lines.append(f"{a.agent:<8}{a.runs:>5}{phi:>18}{ms:>32}{a.convergence_step:>12.1f}")
        if len(self.agents) > 1:
            lines.append("decision time ordering (fastest first): " + " < ".join(self.speed_ordering()))
        return "\n".join(lines)

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SUMMARY_FIELDS)
            for a in self.agents:
                w.writerow([getattr(a, f) for f in SUMMARY_FIELDS])

    def csv_text(self) -> str:
        rows = [",".join(SUMMARY_FIELDS)]
        rows += [",".join(str(getattr(a, f)) for f in SUMMARY_FIELDS) for a in self.agents]
        return "\n".join(rows) + "\n"


def parse_config(text: str) -> dict:
    """Flat ``key = value`` lines grouped by their ``agent.``/``env.``/``harness.`` prefix."""
    out = {"agent": {}, "env": {}, "harness": {}}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        ns, _, name = key.partition(".")
        if ns not in out or not name:
            raise ConfigError(f"line {n}: key {key!r} must start with agent., env. or harness.")
        try:
            out[ns][name] = ast.literal_eval(value)
        except (ValueError, SyntaxError):
            out[ns][name] = value
    return out


def load_config(path) -> dict:
    try:
        return parse_config(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _seeds(seed: int, n: int):
    """Independent (env, agent) seed pairs, one per repetition."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [tuple(int(x) for x in c.generate_state(2)) for c in children]


def build_agent(spec: ExperimentSpec, agent_seed: int, pretrained=None):
    cls = AGENTS[spec.agent]
    agent = cls()
    params = dict(spec.agent_params)
    if "random_state" in agent.get_params():
        params.setdefault("random_state", agent_seed)
    try:
        agent.set_params(**params)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if pretrained is not None:
        agent.use_pretrained(pretrained)
    return agent.reset(spec.device())


def pretrain_dqn(spec: ExperimentSpec, episodes: Optional[int] = None):
    """Bootstrap an LGBN on the ground-truth environment, then pretrain both nets."""
    seq = np.random.SeedSequence([spec.seed, 0xD0])
    boot_seed, init_seed, train_seed = (int(c.generate_state(1)[0]) for c in seq.spawn(3))
    env = ProcessingEnv(spec.ground_truth(), spec.device(), seed=boot_seed)
    lgbn = bootstrap_lgbn(env, seed=boot_seed)
    params = dict(spec.agent_params)
    if episodes is not None:
        params["episodes"] = episodes
    params["random_state"] = init_seed
    agent = DqnAgent(**params).reset(spec.device())
    curve = agent.pretrain(lgbn, seed=train_seed)
    return agent.nets_, curve


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


class _RecordWriter:
    def __init__(self, path: Optional[Path], with_timing: bool):
        self.path = path
        self.with_timing = with_timing
        self._fh = self._timing = None
        if path is None:
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = path.open("w", newline="", encoding="utf-8")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(RECORD_FIELDS)
        self._timing = timing_path(path).open("w", newline="", encoding="utf-8")
        self._tw = csv.writer(self._timing, lineterminator="\n")
        self._tw.writerow(TIMING_FIELDS)

    def write(self, r: RunRecord):
        if self._fh is None:
            return
        row = [_fmt(getattr(r, f)) for f in RECORD_FIELDS]
        if not self.with_timing:
            row[RECORD_FIELDS.index("cycle_ms")] = ""
        self._w.writerow(row)
        self._tw.writerow((r.run_id, r.step, _fmt(r.cycle_ms)))
        self._fh.flush()
        self._timing.flush()

    def close(self):
        for fh in (self._fh, self._timing):
            if fh is not None:
                fh.close()


def timing_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".timing.csv")


def run_experiment(spec: ExperimentSpec, agent_factory=None):
    """Run every repetition of ``spec``; returns ``(records, report)``.

    In fast mode the records CSV leaves ``cycle_ms`` empty so that equal
    seeds give byte-identical files; wall-clock decision times always go
    to the ``.timing.csv`` sidecar.
    """
    pretrained = None
    if spec.agent == "dqn" and agent_factory is None:
        if spec.checkpoint is not None and Path(spec.checkpoint).exists():
            pretrained = load_checkpoint(spec.checkpoint)
        elif spec.require_pretrained:
            raise MissingCheckpoint(f"DQN checkpoint {spec.checkpoint} not found and --require-pretrained given")
        else:
            log.info("no DQN checkpoint given, pretraining first")
            pretrained, _ = pretrain_dqn(spec)

    writer = _RecordWriter(Path(spec.out) if spec.out else None, with_timing=spec.mode == "realtime")
    records = []
    try:
        for rep, (env_seed, agent_seed) in enumerate(_seeds(spec.seed, spec.repetitions)):
            agent = agent_factory(agent_seed) if agent_factory else build_agent(spec, agent_seed, pretrained)
            env = ProcessingEnv(spec.ground_truth(), spec.device(), seed=env_seed)
            loop = ControlLoop(agent, env, TimeSeriesStore()).warm_up()
            run_id = f"{spec.agent}-s{spec.seed}-r{rep}"
            for _ in range(spec.iterations):
                started = time.monotonic()
                t = loop.run_cycle()
                cv, qr = t.observation.cv, t.observation.qr
                rec = RunRecord(run_id, spec.agent, t.step, t.phi_cv, t.phi_qr, t.phi_mean, t.cycle_duration_ms,
                                cv.quality, cv.model_size, cv.cores, qr.quality, qr.cores)
                records.append(rec)
                writer.write(rec)
                if spec.mode == "realtime":
                    time.sleep(max(0.0, CYCLE_SECONDS - (time.monotonic() - started)))
    finally:
        writer.close()
    return records, summarize(records) if spec.iterations >= FINAL_WINDOW else None


def convergence_step(phis, final_mean, tol=0.05, trailing=5) -> int:
    """First 1-based step from which the trailing mean stays within ``tol`` of ``final_mean``."""
    phis = list(phis)
    ok = []
    for j in range(len(phis)):
        window = phis[max(0, j - trailing + 1): j + 1]
        ok.append(abs(math.fsum(window) / len(window) - final_mean) <= tol + 1e-12)
    step = len(phis)
    for j in range(len(phis) - 1, -1, -1):
        if not ok[j]:
            break
        step = j + 1
    return step


def _percentile(xs, q):
    return float(np.percentile(np.asarray(xs, dtype=float), q)) if xs else float("nan")


def summarize(records) -> SummaryReport:
    runs = {}
    for r in records:
        runs.setdefault((r.agent, r.run_id), []).append(r)
    agents = {}
    for (agent, run_id), recs in runs.items():
        recs.sort(key=lambda r: r.step)
        if len(recs) < FINAL_WINDOW:
            raise ValueError(f"run {run_id} has {len(recs)} steps; summaries need at least {FINAL_WINDOW}")
        phis = [r.phi_mean for r in recs]
        final = math.fsum(phis[-FINAL_WINDOW:]) / FINAL_WINDOW
        a = agents.setdefault(agent, {"final": [], "conv": [], "ms": []})
        a["final"].append(final)
        a["conv"].append(convergence_step(phis, final))
        a["ms"].extend(r.cycle_ms for r in recs if r.cycle_ms is not None and not math.isnan(r.cycle_ms))
    out = []
    for agent, a in agents.items():
        ms = a["ms"]
        out.append(AgentSummary(
            agent=agent,
            runs=len(a["final"]),
            final10_mean=statistics.fmean(a["final"]),
            final10_std=statistics.pstdev(a["final"]),
            cycle_ms_mean=statistics.fmean(ms) if ms else float("nan"),
            cycle_ms_median=statistics.median(ms) if ms else float("nan"),
            cycle_ms_p99=_percentile(ms, 99),
            convergence_step=statistics.fmean(a["conv"]),
        ))
    return SummaryReport(out)


def read_records(path) -> list:
    """Load a records CSV, filling ``cycle_ms`` from the timing sidecar when present."""
    path = Path(path)
    timings = {}
    side = timing_path(path)
    if side.exists():
        with side.open(newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                timings[(row["run_id"], int(row["step"]))] = float(row["cycle_ms"])
    out = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RECORD_FIELDS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            step = int(row["step"])
            ms = float(row["cycle_ms"]) if row["cycle_ms"] else timings.get((row["run_id"], step), float("nan"))
            out.append(RunRecord(
                row["run_id"], row["agent"], step, float(row["phi_cv"]), float(row["phi_qr"]),
                float(row["phi_mean"]), ms, int(row["cv_quality"]), int(row["cv_model"]),
                float(row["cv_cores"]), int(row["qr_quality"]), float(row["qr_cores"]),
            ))
    return out
