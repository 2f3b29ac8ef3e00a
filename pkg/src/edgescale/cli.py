"""Command-line entry point: ``edgescale run|pretrain-dqn|report|oracle``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .agents.ask import brute_force_oracle
from .agents.dqn import save_checkpoint
from .harness import (
    AGENTS,
    ConfigError,
    ExperimentSpec,
    MissingCheckpoint,
    load_config,
    pretrain_dqn,
    read_records,
    run_experiment,
    summarize,
)

log = logging.getLogger("edgescale")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="edgescale", description="Multi-dimensional autoscaling benchmark on a simulated edge device.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run an experiment and write per-step records")
    run.add_argument("--agent", required=True, choices=sorted(AGENTS))
    run.add_argument("--iterations", type=int)
    run.add_argument("--repetitions", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--mode", choices=("fast", "realtime"))
    run.add_argument("--config", type=Path)
    run.add_argument("--out", type=Path)
    run.add_argument("--checkpoint", type=Path, help="DQN checkpoint to deploy instead of pretraining")
    run.add_argument("--require-pretrained", action="store_true")

    pre = sub.add_parser("pretrain-dqn", help="pretrain the DQN pair in the LGBN environment")
    pre.add_argument("--episodes", type=int)
    pre.add_argument("--out", type=Path, default=Path("dqn_checkpoint.txt"))
    pre.add_argument("--seed", type=int, default=0)
    pre.add_argument("--config", type=Path)

    rep = sub.add_parser("report", help="summarize a records CSV")
    rep.add_argument("--in", dest="inp", type=Path, required=True)
    rep.add_argument("--format", choices=("table", "csv"), default="table")

    orc = sub.add_parser("oracle", help="brute-force optimum under the ground-truth environment")
    orc.add_argument("--config", type=Path)
    return p


def _spec_from_args(args) -> ExperimentSpec:
    cfg = load_config(args.config) if getattr(args, "config", None) else {"agent": {}, "env": {}, "harness": {}}
    h = cfg["harness"]

    def pick(name, default):
        v = getattr(args, name, None)
        return v if v is not None else h.get(name, default)

    agent = getattr(args, "agent", None) or h.get("agent", "dqn")
    seed = pick("seed", 0)
    out = getattr(args, "out", None) or h.get("out") or Path("runs") / f"{agent}_seed{seed}.csv"
    checkpoint = getattr(args, "checkpoint", None) or h.get("checkpoint")
    return ExperimentSpec(
        agent=agent,
        iterations=int(pick("iterations", 50)),
        repetitions=int(pick("repetitions", 10)),
        seed=int(seed),
        mode=pick("mode", "fast"),
        env=cfg["env"],
        agent_params=cfg["agent"],
        out=Path(out),
        checkpoint=Path(checkpoint) if checkpoint else None,
        require_pretrained=bool(getattr(args, "require_pretrained", False) or h.get("require_pretrained", False)),
    )


def cmd_run(args) -> int:
    spec = _spec_from_args(args)
    records, report = run_experiment(spec)
    print(f"wrote {len(records)} records to {spec.out}")
    if report is not None:
        print(report.table())
    return EXIT_OK


def cmd_pretrain(args) -> int:
    args.agent = "dqn"
    spec = _spec_from_args(args)
    nets, curve = pretrain_dqn(spec, episodes=args.episodes)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(nets, args.out)
    if len(curve):
        k = max(1, len(curve) // 10)
        print(f"episodes={len(curve)} first10%={curve[:k].mean():.3f} last10%={curve[-k:].mean():.3f}")
    print(f"checkpoint written to {args.out}")
    return EXIT_OK


def cmd_report(args) -> int:
    if not args.inp.exists():
        raise FileNotFoundError(f"records file not found: {args.inp}")
    report = summarize(read_records(args.inp))
    print(report.table() if args.format == "table" else report.csv_text(), end="\n" if args.format == "table" else "")
    return EXIT_OK


def cmd_oracle(args) -> int:
    spec = _spec_from_args(args)
    device = spec.device()
    a, phi = brute_force_oracle(spec.ground_truth(), c_phy=device.c_phy)
    print("cv_quality,cv_model,cv_cores,qr_quality,qr_cores,phi_star")
    print(f"{a.cv_quality},{a.cv_model_size},{a.cv_cores:.2f},{a.qr_quality},{a.qr_cores:.2f},{phi:.6f}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "pretrain-dqn": cmd_pretrain, "report": cmd_report, "oracle": cmd_oracle}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, MissingCheckpoint) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
