"""Command line: ``kdvexit {simulate,exit-scan,action,verify-control,report}``."""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from .config import KINDS, ConfigError, RunConfig, load_config
from .pipelines import run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kdvexit", description=__doc__)
    parser.add_argument("command", choices=KINDS)
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--out", help="output directory (overrides output.directory)")
    parser.add_argument("--threads", type=int, help="worker threads (overrides experiment.threads)")
    parser.add_argument("--seed", type=int, help="master seed (overrides experiment.master_seed)")
    return parser


def resolve(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    overrides = {}
    if cfg.kind != args.command:
        overrides["experiment__kind"] = args.command
    if args.threads is not None:
        overrides["experiment__threads"] = args.threads
    if args.seed is not None:
        overrides["experiment__master_seed"] = args.seed
    if args.out is not None:
        overrides["output__directory"] = args.out
    return cfg.replace(**overrides) if overrides else cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
    except ConfigError as exc:
        json.dump({"status": "error", "type": "ConfigError", "problems": exc.problems}, sys.stderr, indent=2)
        sys.stderr.write("\n")
        return 2
    except OSError as exc:
        json.dump({"status": "error", "type": type(exc).__name__, "message": str(exc)}, sys.stderr, indent=2)
        sys.stderr.write("\n")
        return 2
    result = run(cfg)
    summary = {"status": result.manifest["status"], "directory": result.directory, "digest": result.manifest["digest"], "files": result.files}
    json.dump(summary, sys.stdout if result.status == 0 else sys.stderr, indent=2)
    print(file=sys.stdout if result.status == 0 else sys.stderr)
    return result.status


if __name__ == "__main__":
    sys.exit(main())
