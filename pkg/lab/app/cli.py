"""
Command-line entry point.

    python -m app.cli <experiment> [--config PATH] [--out DIR] [--seed N] [--verbose]
    python -m app.cli selftest

Exit codes: 0 when every verdict passes, 1 when any verdict fails or a run breaks down,
2 on configuration or resolution errors.
"""

import argparse
import logging
import sys

from app import __version__
from app.config import EXPERIMENTS, ExperimentConfig, load_config
from app.errors import (
    ConfigError,
    LabError,
    RankHypothesisError,
    TruncationError,
    UnderResolvedError,
)
from app.report import FORMATS, emit
from app.runner import run
from pydantic_core import PydanticSerializationError

logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2

# Errors that mean the requested run was not well posed
CONFIG_ERRORS = (ConfigError, UnderResolvedError, TruncationError, RankHypothesisError)


def _seed(value: str) -> int:
    seed = int(value)
    if not 0 <= seed < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return seed


def _formats(value: str) -> tuple[str, ...]:
    formats = tuple(part.strip() for part in value.split(",") if part.strip())
    unknown = set(formats) - set(FORMATS)
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown formats: {', '.join(sorted(unknown))}")
    return formats


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tubelab",
        description="Run tube concentration, resolvent, damped wave and oscillatory integral "
        "experiments and write CSV/JSON/plot data.",
    )
    parser.add_argument("experiment", choices=EXPERIMENTS, help="Experiment family to run")
    parser.add_argument("--config", type=str, help="Config file (key = value lines)")
    parser.add_argument("--out", type=str, help="Output directory (overrides output_dir)")
    parser.add_argument("--seed", type=_seed, help="Random seed (overrides seed)")
    parser.add_argument(
        "--formats",
        type=_formats,
        default=FORMATS,
        help="Comma-separated output formats (default: csv,json,dat)",
    )
    parser.add_argument("--verbose", action="store_true", help="Debug logging")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config from file or defaults, with command-line overrides applied."""
    if args.config:
        config = load_config(args.config, defaults={"experiment": args.experiment})
        if config.experiment != args.experiment:
            raise ConfigError(
                f"config is for {config.experiment!r}, not {args.experiment!r}",
                field="experiment",
            )
    else:
        config = ExperimentConfig(experiment=args.experiment)
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.out:
        updates["output_dir"] = args.out
    return config.model_copy(update=updates) if updates else config


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        config = resolve_config(args)
        report = run(config)
        paths = emit(report, config.output_dir, args.formats)
    except CONFIG_ERRORS as e:
        print(f"✗ {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (LabError, OSError) as e:
        print(f"✗ {e}", file=sys.stderr)
        return EXIT_FAIL
    except (PydanticSerializationError, TypeError, ValueError) as e:
        logger.exception("Could not write the run outputs")
        print(f"✗ could not write outputs: {e}", file=sys.stderr)
        return EXIT_FAIL

    for path in paths:
        print(f"Wrote {path}")
    return EXIT_PASS if report.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
