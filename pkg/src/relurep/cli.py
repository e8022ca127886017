"""Command-line entry point: ``relurep <command> [options]``.

Exit codes: 0 when the experiment's thresholds hold, 1 on a threshold
breach or failed computation, 2 for usage and configuration errors.
Settings come from an optional ``key = value`` file (``--config``) and are
overridden by ``--set key=value`` and the dedicated flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict

from . import experiments as ex
from .tasks import DataFormatError
from .train import TrainingDiverged

COMMANDS = {
    "train": (ex.TrainCommandConfig, ex.run_train),
    "oracle": (ex.OracleCommandConfig, ex.run_oracle),
    "theorem-check": (ex.TheoremCheckConfig, ex.run_theorem_check),
    "multitask-demo": (ex.MultitaskConfig, ex.run_multitask_demo),
    "appendix-b": (ex.PeriodicTasksConfig, ex.run_periodic_tasks),
    "width-sweep": (ex.WidthSweepConfig, ex.run_width_sweep),
    "gen-data": (ex.GenDataConfig, ex.run_gen_data),
}

HELP = {
    "train": "train a network on a dataset and write report, parameters and curves",
    "oracle": "solve the grid group lasso for a one-dimensional dataset",
    "theorem-check": "compare a trained wide network with the grid oracle",
    "multitask-demo": "joint versus separate fits on the two-task coupling example",
    "appendix-b": "joint versus per-task training on the seven periodic tasks",
    "width-sweep": "best objective against bottleneck width",
    "gen-data": "write a generated dataset as CSV",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="relurep", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--seed", type=int)
        p.add_argument("--lambda", dest="lam", type=float)
        p.add_argument("--out-dir", default="out", help="directory for all outputs")
        p.add_argument("--config", help="file of key = value lines")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        if name == "train":
            p.add_argument("--allow-narrow", action="store_true",
                           help="permit stacks with no more neurons than samples")
    return parser


def _collect(args, cls) -> dict:
    values = ex.read_config_file(args.config) if args.config else {}
    for item in args.set:
        if "=" not in item:
            raise ex.ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        values[key.strip().replace("-", "_")] = val
    if args.seed is not None:
        values["seed"] = args.seed
    if args.lam is not None:
        values["lam"] = args.lam
    if getattr(args, "allow_narrow", False):
        values["allow_narrow"] = True
    names = {f for f in cls.__dataclass_fields__}
    for key in ("seed", "lam"):
        # seeds for multi-seed experiments, no lambda for data generation
        if key in values and key not in names:
            if key == "seed" and "seeds" in names:
                values["seeds"] = (int(values.pop("seed")),)
            else:
                raise ex.ConfigError(f"--{'lambda' if key == 'lam' else key} does not apply here")
    return values


def _summary(command: str, result) -> dict:
    if command == "gen-data":
        return {"path": str(result)}
    if command == "train":
        return result.report.summary()
    if command == "oracle":
        return {"passed": result.passed, "solutions": [s.summary() for s in result.solutions]}
    bulky = {"per_task", "restart_objectives"}
    return {k: v for k, v in asdict(result).items() if k not in bulky}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cls, run = COMMANDS[args.command]
    try:
        cfg = ex.make_config(cls, _collect(args, cls))
        result = run(cfg, args.out_dir)
    except (ex.ConfigError, DataFormatError, FileNotFoundError) as exc:
        print(f"relurep {args.command}: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"relurep {args.command}: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(_summary(args.command, result), indent=2, sort_keys=True,
                     default=ex._jsonable))
    return 0 if getattr(result, "passed", True) else 1


if __name__ == "__main__":
    sys.exit(main())
