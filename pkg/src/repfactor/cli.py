"""Command-line entry point: ``repfactor <stage> CONFIG [overrides]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import RepFactorError
from .pipeline import Pipeline, PipelineConfig, StageError

STAGE_COMMANDS = ["ingest", "profile", "covariance", "decompose", "signatures", "tree"]
STATS_COMMANDS = {"trend": "trend", "correlate": "correlate", "variance-test": "variance-test"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", help="pipeline config (JSON)")
    p.add_argument("--rank", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-sweeps", type=int)
    p.add_argument("--q", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--layer", type=int)
    p.add_argument("--category")
    p.add_argument("--jobs", type=int, help="parallel decompositions (default: $REPFACTOR_JOBS or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="repfactor", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in STAGE_COMMANDS + ["pipeline"]:
        _add_overrides(sub.add_parser(name))
    stats = sub.add_parser("stats").add_subparsers(dest="test", required=True, parser_class=_Parser)
    for name in STATS_COMMANDS:
        _add_overrides(stats.add_parser(name))
    synth = sub.add_parser("synth", help="write the bundled synthetic dataset")
    synth.add_argument("out_dir")
    synth.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            from .synthetic import make_dataset

            print(make_dataset(args.out_dir, seed=args.seed))
            return 0
        overrides = {k: v for k, v in vars(args).items()
                     if k in ("rank", "seed", "tol", "max_sweeps", "q", "alpha",
                              "layer", "category", "jobs")}
        config = PipelineConfig.load(args.config, **overrides)
        pipe = Pipeline(config)
        if args.command == "pipeline":
            summary = pipe.run()
            print(json.dumps(summary, indent=2, sort_keys=True))
            return 0
        stage = STATS_COMMANDS[args.test] if args.command == "stats" else args.command
        pipe.run_stage(stage)
        for path in pipe.artifacts(stage):
            print(path)
        return 0
    except StageError as exc:
        print(f"repfactor: {exc}", file=sys.stderr)
        return exc.exit_code
    except RepFactorError as exc:
        print(f"repfactor: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
