"""Command-line interface.

Subcommands mirror the pipeline stages (simulate, fit-abc, fit-fbp,
evaluate) plus `reproduce <preset>` which runs everything and enforces the
preset's pass/fail gate.

Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure,
4 gate failure.
"""

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .errors import ConfigError, IngestionError, LossAbfError
from .experiments import (
    LONG_RUNNING_PRESETS,
    PRESETS,
    ExperimentConfig,
    gate_report,
    run_experiment,
    stage_evaluate,
    stage_fit_abc,
    stage_fit_fbp,
    stage_simulate,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3
EXIT_GATE = 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); the contract wants 1
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="lossabf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, preset_positional=False):
        if preset_positional:
            p.add_argument("preset", help="preset name, e.g. table2-desk")
        else:
            p.add_argument("--config", help="path to a JSON experiment config")
            p.add_argument("--preset", help="start from a named preset")
        p.add_argument("--out-dir", required=True, help="artifact directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--workers", type=int, help="worker process count")
        p.add_argument("--data", help="returns CSV for the empirical design")

    for name in ("simulate", "fit-abc", "fit-fbp", "evaluate"):
        add_common(sub.add_parser(name))
    add_common(sub.add_parser("reproduce"), preset_positional=True)
    return parser


def _resolve_config(args) -> ExperimentConfig:
    preset = getattr(args, "preset", None)
    config_path = getattr(args, "config", None)
    if preset is not None:
        if preset not in PRESETS:
            raise UsageError(
                f"unknown preset {preset!r}; available: {', '.join(sorted(PRESETS))}"
            )
        cfg = PRESETS[preset]
    elif config_path is not None:
        cfg = ExperimentConfig.from_json(Path(config_path).read_text())
    else:
        raise UsageError("provide --config or --preset")
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.data is not None:
        overrides["data_path"] = args.data
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _resolve_config(args)
        out_dir = Path(args.out_dir)
        if args.command == "simulate":
            stage_simulate(cfg, out_dir)
        elif args.command == "fit-abc":
            stage_fit_abc(cfg, out_dir)
        elif args.command == "fit-fbp":
            stage_fit_fbp(cfg, out_dir)
        elif args.command == "evaluate":
            stage_evaluate(cfg, out_dir)
        elif args.command == "reproduce":
            if args.preset in LONG_RUNNING_PRESETS:
                log.warning("preset %s runs at paper scale and takes hours", args.preset)
            report = run_experiment(cfg, out_dir)
            ok, message = gate_report(args.preset, report)
            print(f"gate[{args.preset}]: {'PASS' if ok else 'FAIL'} - {message}")
            if not ok:
                return EXIT_GATE
        return EXIT_OK
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IngestionError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LossAbfError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
