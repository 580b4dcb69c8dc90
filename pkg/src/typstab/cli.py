"""Command-line entry point: ``typstab <subcommand> [--config PATH] ...``."""
from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from . import __version__
from .errors import TypstabError
from .experiments import COLUMNS, SCHEMAS, build_config, config_from_manifest, env_seed, fmt, parse_config, run_experiment

SUBCOMMANDS = {
    "calibrate": ("calibrate", "invert gamma_n to the confidence half-width alpha and noise scales"),
    "mech-tail": ("mechanism_tail", "Monte Carlo check of the mechanism error bounds"),
    "compose": ("compose", "composition calculators (pure, approx, non_adaptive)"),
    "verify": ("verify_discrete", "exact checks on the randomized-response reference instance"),
    "adaptive": ("adaptive_session", "adaptive analyst sessions against a calibrated mechanism"),
}


def _defaults_help(kind: str) -> str:
    fields = SCHEMAS[kind]
    keys = ", ".join(f"{name}={fmt(f.default) if f.default is not None else 'auto'}" for name, f in fields.items())
    return f"config keys (defaults): {keys}. CSV columns: {', '.join(COLUMNS[kind])}."


def _seed(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _threads(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("threads must be at least 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="typstab",
        description="Typically stable mechanisms: calibration, composition and adaptive-analysis experiments.",
        epilog="TYPSTAB_SEED sets the seed when neither --seed nor the config gives one.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (kind, text) in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=text, description=f"{text}. {_defaults_help(kind)}")
        p.add_argument("--config", metavar="PATH", help="YAML file of parameters")
        p.add_argument("--seed", type=_seed, metavar="U64", help="master seed (overrides config and TYPSTAB_SEED)")
        p.add_argument("--threads", type=_threads, metavar="N", help="worker threads (results do not depend on it)")
        p.add_argument("--out", metavar="DIR", default=".", help="output directory (default: current)")
        p.set_defaults(kind=kind)
    replay = sub.add_parser("replay", help="re-run an experiment from its manifest.json")
    replay.add_argument("manifest", metavar="MANIFEST")
    replay.add_argument("--out", metavar="DIR", required=True)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "replay":
            config = config_from_manifest(args.manifest)
        elif args.config:
            config = parse_config(args.config, args.kind, args.seed, args.threads)
        else:
            config = build_config(args.kind, {}, args.seed, args.threads)
        if args.command == "replay":
            source = "manifest"
        else:
            source = "cli" if args.seed is not None else "config"
        result = run_experiment(config, args.out, env_seed(), source)
    except TypstabError as exc:
        print(f"typstab: error: {exc}", file=sys.stderr)
        return 2
    for line in result.lines:
        print(line)
    print(f"seed={result.seed} ({result.seed_source}); manifest: {result.manifest_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
