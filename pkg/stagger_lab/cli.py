# stagger_lab/cli.py

"""
Command-line front door.

    stagger-lab diagnose --config run.json --out results/
    stagger-lab frontier --design mc84 --grid mc84 --seed 7 --threads 4
"""

import argparse
import json
import logging
import sys
from typing import List, Optional

from .conf import app_settings
from .constants import Command
from .exceptions import ConfigInvalid, StaggerLabError
from .services import RunConfig, load_config, run_pipeline

logger = logging.getLogger("stagger_lab")

EXIT_OK = 0
EXIT_ERROR = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stagger-lab",
        description="Staggered-adoption diagnostics, estimation, sensitivity and simulation.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in Command:
        sub = subparsers.add_parser(command.value)
        sub.add_argument("--config", help="JSON run configuration")
        sub.add_argument("--panel", help="panel CSV (unit, time, outcome, cohort, ...)")
        sub.add_argument("--design", help="simulation preset key")
        sub.add_argument("--grid", help="named grid or JSON [[DeltaR...], [B...], [Gamma...]]")
        sub.add_argument("--seed", type=int)
        sub.add_argument("--threads", type=int, help="worker threads (env STAGGER_LAB_THREADS)")
        sub.add_argument("--out", help="output directory")
        sub.add_argument("--replications", type=int)
        sub.add_argument(
            "--paper-scale", action="store_true", help="n = 5000 and R = 2000 replications"
        )
    return parser


def _grid_argument(value: Optional[str]):
    if value is None:
        return None
    if value.lstrip().startswith("["):
        try:
            return json.loads(value)
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"--grid is not valid JSON: {exc}") from exc
    return value


def config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {
        "command": args.command,
        "panel": args.panel,
        "design": args.design,
        "grid": _grid_argument(args.grid),
        "seed": args.seed,
        "threads": args.threads,
        "out": args.out,
        "replications": args.replications,
        "scale": "full" if args.paper_scale else None,
    }
    if args.config:
        return load_config(args.config, **overrides)
    return RunConfig.from_mapping({}, **overrides)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=app_settings.LOG_LEVEL,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        manifest = run_pipeline(config_from_args(args))
    except StaggerLabError as exc:
        logger.error(f"{type(exc).__name__}: {exc.message}")
        print(json.dumps(exc.to_dict(), sort_keys=True, default=str), file=sys.stderr)
        return EXIT_ERROR
    print(json.dumps(manifest, indent=2, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
