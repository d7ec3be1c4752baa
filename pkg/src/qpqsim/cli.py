"""
Command-line entry point: one subcommand per scenario plus ``summarize``.

Exit codes: 0 on success, 2 when the configuration is rejected, 3 when a
run fails.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .harness import SCENARIOS, ConfigError, ExperimentConfig, ExperimentReport, run_scenario, summarize

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

# flag -> parameter name
PARAM_FLAGS = {
    "db_size": "database_size",
    "substrings": "substring_count",
    "check_fraction": "check_fraction",
    "eta": "eta",
    "group_size": "group_size",
    "group_count": "group_count",
    "raw_length": "raw_length",
    "significance": "significance",
    "one_sided": "one_sided_step3",
    "max_restarts": "max_restarts",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qpqsim", description="Seeded Monte Carlo experiments on QPQ protocols.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name in SCENARIOS:
        p = sub.add_parser(name, help=f"run the {name} scenario")
        p.add_argument("--trials", type=int, default=1)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--db-size", type=int)
        p.add_argument("--substrings", type=int, help="number of raw-key substrings k")
        p.add_argument("--check-fraction", type=float)
        p.add_argument("--eta", type=float, help="probability of a Z-basis measurement")
        p.add_argument("--group-size", type=int)
        p.add_argument("--group-count", type=int)
        p.add_argument("--raw-length", type=int)
        p.add_argument("--significance", type=float)
        p.add_argument("--one-sided", action="store_true", default=None, help="one-sided step-3 basis test")
        p.add_argument("--max-restarts", type=int)
        p.add_argument("--database", type=Path, help="file holding the database as one line of 0/1")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--omit-timing", action="store_true", help="write duration_ms as null")
        p.add_argument("--output", type=Path, help="report path (default: stdout)")
        p.add_argument("--format", choices=("json", "csv"), default="json")

    p = sub.add_parser("summarize", help="tabulate JSON reports of one scenario as CSV")
    p.add_argument("reports", nargs="*", type=Path)
    p.add_argument("--output", type=Path)
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    params = {name: getattr(args, flag) for flag, name in PARAM_FLAGS.items() if getattr(args, flag) is not None}
    return ExperimentConfig(
        scenario=args.command,
        trials=args.trials,
        master_seed=args.seed,
        params=params,
        workers=args.workers,
        database_path=None if args.database is None else str(args.database),
    )


def _emit(text: str, output: Path | None) -> None:
    if output is None:
        sys.stdout.write(text)
    else:
        output.write_text(text, encoding="utf-8")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")

    if args.command == "summarize":
        try:
            reports = [ExperimentReport.from_json(p.read_text(encoding="utf-8")) for p in args.reports]
            _emit(summarize(reports), args.output)
        except (OSError, KeyError, ValueError) as exc:
            print(f"qpqsim: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK

    config = config_from_args(args)
    try:
        config.validate()
    except ConfigError as exc:
        print(f"qpqsim: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = run_scenario(config, timing=not args.omit_timing)
        _emit(report.to_json() if args.format == "json" else report.to_csv(), args.output)
    except Exception as exc:  # noqa: BLE001 - any failure during a run maps to one exit code
        print(f"qpqsim: run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK
