"""Command-line entry point: ``hiergp {emulate,recover,simulate-prior,benchmark}``."""
from __future__ import annotations

import argparse
import logging
import sys

from .bench import OUT_ENV, ExperimentConfig, run
from .errors import ConfigError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hiergp",
        description="Hierarchical shrinkage GP emulation and equation recovery.",
        epilog=f"Outputs go to --out, else the config's 'out', else ${OUT_ENV}/<task>-seed<seed> (default root: runs).",
    )
    sub = parser.add_subparsers(dest="task", required=True)
    for task, help_text in (
        ("emulate", "fit one emulator and write predictions"),
        ("recover", "recover governing equations from a simulated trajectory"),
        ("simulate-prior", "draw a test function and datasets from the prior"),
        ("benchmark", "replicated emulation benchmark over several models"),
    ):
        p = sub.add_parser(task, help=help_text)
        p.add_argument("--config", help="TOML (or JSON snapshot) experiment file")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--model", action="append", help="model name; repeat for several")
        p.add_argument("--replications", type=int, help="number of replications (benchmark)")
        p.add_argument("--workers", type=int, help="worker processes for replications")
        p.add_argument("--branin-as-printed", action="store_true",
                       help="use the Branin variant without the square on the first x1 term")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def load_config(args) -> ExperimentConfig:
    overrides = {"task": args.task, "seed": args.seed, "replications": args.replications,
                 "workers": args.workers, "models": args.model}
    if args.config:
        cfg = ExperimentConfig.from_file(args.config, **overrides)
    else:
        defaults = {"emulate": {"models": ["hiergp"]}, "recover": {"models": ["hiergp", "sindy"]}}.get(args.task, {})
        cfg = ExperimentConfig.from_dict(defaults, **overrides)
    if args.branin_as_printed:
        cfg.raw["data"]["branin_as_printed"] = True
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        result = run(cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"wrote {result['out']}")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
