"""Command-line interface.

Every pipeline subcommand runs its stage plus whatever upstream stages are not
current. Each configuration key is also a flag (``--copurchase.tau_days 30``);
flags override the config file. Counters go to stdout as ``key=value`` lines.

Exit codes: 0 success, 1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import KEYS, ConfigError, coerce, load_config
from .datamodel import ParseError
from .pipeline import STAGES, PipelineError, dependencies, run
from .synth import SynthSpec, generate_synthetic

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2

STAGE_HELP = {
    "ingest": "validate and count input files",
    "recall-copurchase": "co-purchase pair counts",
    "recall-title": "title TF-IDF cosine pairs",
    "fuse": "category filter, top-k recall sets and waterfall fusion",
    "train": "train the logistic-regression match model",
    "rank-correct": "re-rank the fused set with the match model",
    "eval": "MAP / F1 report and figures",
    "pipeline": "run every stage",
}

REQUIRED_INPUTS = {
    "recall-copurchase": ["paths.purchases"],
    "recall-title": ["paths.items"],
    "fuse": ["paths.items"],
    "train": ["paths.packages", "paths.items", "paths.features"],
    "rank-correct": ["paths.items", "paths.features"],
    "eval": ["paths.truth"],
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("-c", "--config", help="key = value configuration file")
    p.add_argument("--force", action="store_true", help="rerun stages even if current")
    group = p.add_argument_group("configuration keys")
    for key in KEYS:
        group.add_argument(f"--{key.name}", dest=key.name, metavar="VALUE", default=None,
                           help=f"{key.help} (default: {key.default!r})" if key.help else f"default: {key.default!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="recall-forge", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in [s.name for s in STAGES] + ["pipeline"]:
        _add_config_flags(sub.add_parser(name, help=STAGE_HELP[name]))
    synth = sub.add_parser("synth", help="write a synthetic dataset with planted ground truth")
    synth.add_argument("--out", required=True, help="output directory")
    defaults = SynthSpec()
    for field_name in ("users", "items", "packages", "planted", "seed", "categories", "feature_dim", "vocab"):
        synth.add_argument(f"--{field_name.replace('_', '-')}", dest=field_name, type=int,
                           default=getattr(defaults, field_name))
    synth.add_argument("--tau", dest="tau_days", type=float, default=defaults.tau_days,
                       help="co-purchase window in days")
    return parser


def _print_counters(counters) -> None:
    for key in sorted(counters):
        v = counters[key]
        print(f"{key}={v:.9f}" if isinstance(v, float) else f"{key}={v}")


def _validate_inputs(config, names) -> None:
    for name in names:
        for key in REQUIRED_INPUTS.get(name, ()):
            path = config[key]
            if not path:
                raise ConfigError(f"{key} must be set for stage {name}")
            if not os.path.exists(path):
                raise ConfigError(f"{key}: {path} does not exist")


def _run_stage_command(args) -> int:
    overrides = {}
    for key in KEYS:
        raw = getattr(args, key.name)
        if raw is not None:
            overrides[key.name] = coerce(key.name, raw)
    config = load_config(args.config, overrides)
    target = None if args.command == "pipeline" else args.command
    names = dependencies(target) if target else [s.name for s in STAGES]
    _validate_inputs(config, names)
    try:
        counters = run(config, until=target, force=args.force)
    except PipelineError as exc:
        _print_counters(exc.counters)
        print(f"error: stage {exc.stage}: {exc.cause}", file=sys.stderr)
        return EXIT_VALIDATION if isinstance(exc.cause, (ParseError, ConfigError)) else EXIT_RUNTIME
    _print_counters(counters)
    return EXIT_OK


def _run_synth(args) -> int:
    spec = SynthSpec(users=args.users, items=args.items, packages=args.packages, planted=args.planted,
                     tau_days=args.tau_days, seed=args.seed, categories=args.categories,
                     feature_dim=args.feature_dim, vocab=args.vocab)
    paths = generate_synthetic(args.out, spec)
    for name in sorted(paths):
        print(f"synth.{name}={paths[name]}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "synth":
            return _run_synth(args)
        return _run_stage_command(args)
    except (ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        # bad synth parameters
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION if args.command == "synth" else EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
