"""
Command-line entry point

    python -m app.cli design   --config cfg.json [--gamma G] [--out DIR]
    python -m app.cli curve    --config cfg.json [--gamma-min A --gamma-max B] [--points N] [--out DIR]
    python -m app.cli simulate --config cfg.json [--seed S] [--out DIR]
    python -m app.cli pendulum [--points N] [--out DIR]
    python -m app.cli schema

Exit codes: 0 success, 1 input error, 2 infeasible gamma, 3 internal
consistency failure.
"""

import argparse
import json
import logging
import sys
from typing import List, Optional

from pydantic import ValidationError

from app import commands
from app.core.config import configure_logging
from app.core.errors import InfeasibleGammaError, ResampleError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="resample",
        description="Sampled-data redesign of analog controllers under intermittent sampling",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def with_common(p: argparse.ArgumentParser, config: bool = True) -> argparse.ArgumentParser:
        if config:
            p.add_argument("--config", required=True, help="project JSON document")
        p.add_argument(
            "--out", default=None, help="output directory for CSV and JSON files (default: RESAMPLE_OUTPUT_DIR)"
        )
        return p

    design = with_common(sub.add_parser("design", help="synthesize the sampled-data controller"))
    design.add_argument("--gamma", type=float, default=None, help="override the configured gamma")

    curve = with_common(sub.add_parser("curve", help="longest admissible interval over gamma"))
    curve.add_argument("--gamma-min", type=float, default=None)
    curve.add_argument("--gamma-max", type=float, default=None)
    curve.add_argument("--points", type=int, default=40)

    simulate = with_common(sub.add_parser("simulate", help="closed-loop simulation"))
    simulate.add_argument("--gamma", type=float, default=None)
    simulate.add_argument(
        "--seed", type=int, default=None, help="seed for random patterns and noise (default: RESAMPLE_DEFAULT_SEED)"
    )

    pendulum = with_common(sub.add_parser("pendulum", help="reproduce the pendulum example"), config=False)
    pendulum.add_argument("--points", type=int, default=40)

    sub.add_parser("schema", help="print the JSON schema of the project document")
    return parser


def run(args: argparse.Namespace) -> str:
    """Execute one subcommand and return its JSON output"""
    if args.command == "schema":
        return commands.config_schema()
    if args.command == "pendulum":
        report = commands.cmd_pendulum(out_dir=args.out, points=args.points, persist=True)
        return report.model_dump_json(indent=2)

    config = commands.load_config(args.config)
    if args.command == "design":
        report = commands.cmd_design(config, out_dir=args.out, gamma=args.gamma, persist=True)
    elif args.command == "curve":
        report = commands.cmd_curve(
            config,
            gamma_min=args.gamma_min,
            gamma_max=args.gamma_max,
            points=args.points,
            out_dir=args.out,
            persist=True,
        )
    else:
        report = commands.cmd_simulate(config, out_dir=args.out, seed=args.seed, gamma=args.gamma, persist=True)
    return report.model_dump_json(indent=2)


def main(argv: Optional[List[str]] = None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        print(run(args))
    except ValidationError as exc:
        print(f"invalid configuration:\n{exc}", file=sys.stderr)
        return EXIT_INPUT
    except InfeasibleGammaError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        print(json.dumps(exc.certificate, indent=2, default=str), file=sys.stderr)
        return exc.exit_code
    except ResampleError as exc:
        logger.error(f"{args.command} failed: {exc}")
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
