"""Command-line entry point.

    resrl eval-linear --env star --learner residual_gradient --steps 100000
    resrl train --env pendulum --variant bi_res --eta 0.05 --seeds 0,1,2 --out runs/bires
    resrl plan --env point_mass --planner dyna --plan-eta 0.2 --out runs/dyna
    resrl summarize runs/bires --baseline runs/ddpg

Every configuration key has a ``--key-name`` flag; flags override values read
with ``--config``.  Exit status: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import harness
from .metrics import summarize_dir

KIND_BY_COMMAND = {"eval-linear": "policy_eval", "train": "model_free", "plan": "model_based"}
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="key = value file with [section] headers")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="run a single seed")
    for name in harness.FIELD_TYPES:
        if name == "kind":
            continue
        p.add_argument("--" + name.replace("_", "-"), dest=name, default=argparse.SUPPRESS,
                       metavar=name.upper())


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="resrl", description="Residual and semi-gradient RL experiments")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for command in KIND_BY_COMMAND:
        _add_config_flags(sub.add_parser(command))
    s = sub.add_parser("summarize", help="rebuild summary.json from per-seed CSVs")
    s.add_argument("directory")
    s.add_argument("--baseline", metavar="DIR", help="directory of the baseline run for AUC improvement")
    s.add_argument("--out", metavar="PATH", help="where to write the summary (default: DIR/summary.json)")
    return parser


def config_from_args(args: argparse.Namespace) -> harness.ExperimentConfig:
    file_values = harness.read_config_file(args.config) if args.config else {}
    overrides = {}
    for name in harness.FIELD_TYPES:
        if name in vars(args) and name != "kind":
            overrides[name] = harness.parse_value(name, getattr(args, name))
    if "seed" in vars(args):
        overrides["seeds"] = (args.seed,)
    overrides["kind"] = KIND_BY_COMMAND[args.command]
    return harness.build_config(file_values, overrides)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
        if args.command == "summarize":
            summary = summarize_dir(args.directory, args.baseline)
            harness.write_json(args.out or f"{args.directory}/summary.json", summary)
            print(f"auc mean {summary['auc']['mean']}")
            if "auc_improvement" in summary:
                print(f"auc improvement {summary['auc_improvement']['of_mean']}")
            return EXIT_OK
        cfg = config_from_args(args)
    except (UsageError, harness.ConfigError) as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    except (OSError, ValueError, ZeroDivisionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    try:
        summary = harness.run_experiment(cfg)
    except Exception as exc:  # noqa: BLE001
        logging.getLogger("resrl").exception("run failed")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for seed, status in summary["status"].items():
        print(f"seed {seed}: {status}")
    if cfg.kind != "policy_eval" and summary["auc"]["mean"] is not None:
        print(f"auc mean {summary['auc']['mean']}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
