"""
Command-line runner for the salt-lab experiment pipeline.

Usage:
    python scripts/run.py gen-data --config configs/smoke.yaml
    python scripts/run.py train --role slm --config configs/smoke.yaml
    python scripts/run.py score --config configs/smoke.yaml
    python scripts/run.py select --config configs/smoke.yaml [--m 256]
    python scripts/run.py train --role salt_ds --config configs/smoke.yaml
    python scripts/run.py eval|report|diagnose --config configs/smoke.yaml
    python scripts/run.py ablate --kind n_kd --values 0 50 100 --config configs/smoke.yaml
    python scripts/run.py acceptance --config configs/desk.yaml --seeds 0 1 2

Any config field can be overridden with --set dotted.key=value (repeatable).

Environment variables (all optional):
    SALT_OUTPUT_ROOT   - directory holding one sub-directory per run (default: runs)
    SALT_METRICS_SINK  - "jsonl" or "memory" (default: jsonl)
    SALT_LOG_LEVEL     - logging level name (default: INFO)
"""

import argparse
import logging
import os
import sys

# Make sure project root is on sys.path when run as a script
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.adapters.factory import create_artifact_store
from src.config import ROLES, load_config
from src.pipeline import ABLATIONS, Experiment, acceptance
from src.trainer.loop import TrainingDiverged

logging.basicConfig(
    level=os.environ.get("SALT_LOG_LEVEL", "INFO").upper(),
    format="%(asctime)s  %(levelname)-7s  %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
)
log = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config (defaults apply when omitted)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field, e.g. --set distill.omega=0.5")

    parser = argparse.ArgumentParser(description="Two-stage KD pre-training lab")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gen-data", "score", "eval", "report", "diagnose"):
        sub.add_parser(name, parents=[common])
    train = sub.add_parser("train", parents=[common])
    train.add_argument("--role", required=True, choices=ROLES)
    select = sub.add_parser("select", parents=[common])
    select.add_argument("--m", type=int, default=None, help="number of sequences to keep")
    ablate = sub.add_parser("ablate", parents=[common])
    ablate.add_argument("--kind", required=True, choices=ABLATIONS)
    ablate.add_argument("--values", nargs="+", required=True)
    accept = sub.add_parser("acceptance", parents=[common])
    accept.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    return parser


def run(args: argparse.Namespace) -> None:
    config = load_config(args.config, args.overrides)
    sink_kind = os.environ.get("SALT_METRICS_SINK")

    if args.command == "acceptance":
        result = acceptance(config, args.seeds,
                            lambda run_name: create_artifact_store(f"{config.name}/{run_name}"), sink_kind)
        for check, passed in result["checks"].items():
            print(f"{check:45s} {passed}")
        return

    exp = Experiment(config, create_artifact_store(config.name), sink_kind)
    if args.command == "gen-data":
        exp.gen_data()
    elif args.command == "train":
        exp.train(args.role)
    elif args.command == "score":
        exp.score()
    elif args.command == "select":
        exp.select(args.m)
    elif args.command == "eval":
        exp.evaluate()
    elif args.command == "report":
        exp.report()
    elif args.command == "diagnose":
        report = exp.diagnose()
        if report.substitutions:
            print(f"Monte Carlo substitutes: {', '.join(report.substitutions)}")
    elif args.command == "ablate":
        exp.ablate(args.kind, args.values)
    log.info("%s done run=%s", args.command, config.name)


def main(argv: list[str] | None = None) -> None:
    args = build_parser().parse_args(argv)
    try:
        run(args)
    except (ValueError, FileNotFoundError, TrainingDiverged) as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":
    main()
