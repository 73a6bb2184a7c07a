"""Command-line entry point for TimefrontRMT."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from tfrmt import __version__
from tfrmt.config import ExperimentConfig, load_config, resolve_workers
from tfrmt.errors import ConfigError, TfrmtError
from tfrmt.models import COMMAND_CHOICES, METHOD_CHOICES
from tfrmt.runner import ExperimentRunner, RunOptions
from tfrmt.utils.logger import get_logger, setup_logging


logger = get_logger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tfrmt",
        description="Deep-ocean acoustic timefronts from parabolic-equation and random-matrix propagation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, description in COMMAND_CHOICES:
        sub = commands.add_parser(name, help=description, description=description)
        sub.add_argument("--config", type=Path, help="experiment JSON file (defaults when omitted)")
        sub.add_argument("--seed", type=int, help="master seed (u64)")
        sub.add_argument("--members", type=int, help="ensemble members")
        sub.add_argument("--range", dest="range_km", type=float, help="range in km, a whole multiple of r_b")
        sub.add_argument(
            "--epsilon-scale",
            "--epsilon",
            dest="strength",
            type=float,
            help="internal-wave strength multiplier (0 disables scattering)",
        )
        sub.add_argument("--workers", type=int, help="worker threads (overrides TFRMT_WORKERS)")
        sub.add_argument("--out", type=str, help="output directory")
        sub.add_argument("--log-level", type=str.upper, help="DEBUG, INFO, WARNING, ...")
        if name in ("timefront", "average"):
            sub.add_argument("--method", choices=METHOD_CHOICES, default="rmt")
        if name in ("modes", "pe-unitary", "rmt-ensemble"):
            sub.add_argument("--k", type=float, help="wavenumber in rad/km (default: source centre)")
        if name in ("timefront", "average", "mixing-front", "compare"):
            sub.add_argument("--depths", type=float, nargs="+", help="trace depths in km")
        if name == "mixing-front":
            sub.add_argument("--pe-members", type=int, default=0, help="PE members for the depth profile")
    return parser


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(args.config).with_overrides(
        seed=args.seed,
        members=args.members,
        range_km=args.range_km,
        strength=args.strength,
        out_dir=args.out,
    )
    if args.log_level:
        config = replace(config, outputs=replace(config.outputs, log_level=args.log_level))
    return config


def _options_from_args(args: argparse.Namespace) -> RunOptions:
    return RunOptions(
        method=getattr(args, "method", "rmt"),
        k=getattr(args, "k", None),
        depths=getattr(args, "depths", None),
        pe_members=getattr(args, "pe_members", 0),
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command and return the process exit code."""
    args = build_parser().parse_args(list(argv) if argv is not None else None)
    try:
        config = _config_from_args(args)
        workers = resolve_workers(args.workers)
    except ConfigError as exc:
        setup_logging()
        logger.bind(field=exc.field).error("Invalid configuration: {}", exc)
        return EXIT_CONFIG

    setup_logging(config.outputs.log_level, Path(config.outputs.directory))
    logger.info("tfrmt {} running {} with {} workers", __version__, args.command, workers)
    try:
        runner = ExperimentRunner(config, workers)
        manifest = runner.run(args.command, _options_from_args(args))
    except ConfigError as exc:
        logger.bind(field=exc.field).exception("Invalid configuration: {}", exc)
        return EXIT_CONFIG
    except (TfrmtError, RuntimeError, OSError, ValueError) as exc:
        logger.bind(error=str(exc)).exception("{} failed", args.command)
        return EXIT_RUNTIME
    logger.info("Wrote {} outputs to {}", len(manifest.outputs), Path(config.outputs.directory) / args.command)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
