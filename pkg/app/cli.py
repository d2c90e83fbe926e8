"""Command-line entry point: ``python -m app.cli <command> [flags]``.

Exit codes: 0 success, 2 privacy violation detected, 64 usage or configuration
error (caught before the run starts), 70 failure during the run, 74 IO failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import List, Literal, Optional, Sequence, Union

from pydantic import BaseModel, ValidationError

from app.config import Settings, get_settings
from app.errors import AuditError
from app.pipelines import audit_run, estimate_hist, poly_table, synthetic_mse
from app.pipelines.base import configure_logging
from app.services.poly_cache import get_poly_table

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VIOLATION = 2
EXIT_USAGE = 64
EXIT_SOFTWARE = 70
EXIT_IO = 74

Command = Literal["audit", "synthetic-mse", "estimate", "poly-table"]

OPTION_MODELS = {
    "audit": audit_run.AuditOptions,
    "synthetic-mse": synthetic_mse.SyntheticOptions,
    "estimate": estimate_hist.EstimateOptions,
    "poly-table": poly_table.PolyTableOptions,
}

# Resolve presets, distribution specs and degree guards while still parsing.
PREFLIGHT = {
    "audit": audit_run.preflight,
    "synthetic-mse": synthetic_mse.preflight,
    "estimate": estimate_hist.preflight,
    "poly-table": poly_table.preflight,
}


class CliUsageError(Exception):
    pass


class CliConfig(BaseModel):
    """A command with its merged and validated options."""

    command: Command
    options: Union[
        audit_run.AuditOptions,
        synthetic_mse.SyntheticOptions,
        estimate_hist.EstimateOptions,
        poly_table.PolyTableOptions,
    ]

    @classmethod
    def build(cls, command: str, defaults: dict, file_values: dict, flags: dict) -> "CliConfig":
        """Merge defaults < config file < flags and validate the result."""
        merged = {**defaults, **file_values, **flags}
        options = OPTION_MODELS[command].model_validate(merged)
        return cls(command=command, options=options)


class CliArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def settings_defaults(command: str, settings: Settings) -> dict:
    if command == "audit":
        return {
            "n": settings.default_n,
            "trials": settings.audit_trials,
            "c1": settings.c1,
            "c2": settings.c2,
            "c3": settings.c3_audit,
            "grid_points": settings.audit_grid_points,
            "grid_max": settings.audit_grid_max,
            "bin_width": settings.bin_width,
            "violation_tolerance": settings.violation_tolerance,
            "jobs": settings.jobs,
        }
    if command == "synthetic-mse":
        return {
            "trials": settings.synthetic_trials,
            "c1": settings.c1,
            "c2": settings.c2,
            "c3": settings.c3_synthetic,
            "jobs": settings.jobs,
            "out": settings.results_dir / "synthetic_mse.csv",
        }
    if command == "estimate":
        return {"c1": settings.c1, "c2": settings.c2, "c3": settings.c3_synthetic}
    return {}


def load_config_file(path: Path, command: str) -> dict:
    """Options for ``command`` from a JSON file, either flat or under a section named after it."""
    with path.open("r", encoding="utf-8") as handle:
        try:
            payload = json.load(handle)
        except json.JSONDecodeError as exc:
            raise CliUsageError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise CliUsageError(f"config file {path} must hold a JSON object")
    section = payload.get(command, payload)
    if not isinstance(section, dict):
        raise CliUsageError(f"section '{command}' of {path} must be a JSON object")
    values = {key.replace("-", "_"): value for key, value in section.items() if key not in OPTION_MODELS}
    return values


def _add_estimator_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--c1", type=float, help="Region constant c1")
    parser.add_argument("--c2", type=float, help="Region constant c2 (< c1)")
    parser.add_argument("--c3", type=float, help="Degree constant: K = floor(c3 ln n)")


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON file with option values; flags win over it")
    parser.add_argument("--cache", type=Path, help="Coefficient cache path (overrides DPAUDIT_CACHE)")


def build_parser() -> argparse.ArgumentParser:
    parser = CliArgumentParser(prog="dpaudit", description="Black-box differential-privacy auditing toolkit")
    commands = parser.add_subparsers(dest="command", metavar="command", required=True)

    audit = commands.add_parser(
        "audit", help="Estimate the (eps, delta) region of a mechanism", argument_default=argparse.SUPPRESS
    )
    audit.add_argument("--mechanism", help="Mechanism preset id (see data/mechanisms.json)")
    audit.add_argument("--eps0", type=float, help="Claimed epsilon (overrides the preset)")
    audit.add_argument("--delta0", type=float, help="Claimed delta / MTGM mixing probability")
    audit.add_argument("--bound", type=int, help="SVT cutoff: answers stop after this many trues")
    audit.add_argument("--n", type=float, help="Poisson sampling rate per histogram")
    audit.add_argument("--trials", type=int, help="Monte-Carlo trials per category")
    audit.add_argument("--seed", type=int, help="Root seed")
    audit.add_argument("--out", type=Path, help="Report CSV path")
    audit.add_argument("--categories", nargs="+", help="Database categories to audit (default: all compatible)")
    audit.add_argument(
        "--query-count",
        type=int,
        nargs="+",
        choices=(5, 10),
        help="Queries per database; several values are audited together",
    )
    audit.add_argument("--eps-grid", type=float, nargs="+", help="Explicit epsilon grid")
    audit.add_argument("--grid-points", type=int, help="Points of the default grid on [0, grid-max]")
    audit.add_argument("--grid-max", type=float, help="Upper end of the default grid")
    audit.add_argument("--bin-width", type=float, help="Bin width for continuous outputs")
    audit.add_argument("--violation-tolerance", type=float, help="Minimum excess over delta0 reported as a violation")
    audit.add_argument("--split", action="store_true", help="Use independent classification samples")
    audit.add_argument("--jobs", type=int, help="Parallel trial workers (default: all cores)")
    _add_estimator_flags(audit)
    _add_common_flags(audit)

    mse = commands.add_parser(
        "synthetic-mse", help="MSE of plug-in vs polynomial estimators", argument_default=argparse.SUPPRESS
    )
    mse.add_argument("--p-dist", help="Distribution P: 'uniform' or 'zipf:<alpha>'")
    mse.add_argument("--dist", help="Distribution Q: 'uniform' or 'zipf:<alpha>'")
    mse.add_argument("--S", type=int, help="Alphabet size")
    mse.add_argument("--eps", type=float, help="Epsilon")
    mse.add_argument("--n-grid", type=float, nargs="+", help="Sample sizes")
    mse.add_argument("--trials", type=int, help="Trials per sample size")
    mse.add_argument("--seed", type=int, help="Root seed")
    mse.add_argument("--out", type=Path, help="Output CSV path")
    mse.add_argument("--split", action="store_true", help="Use independent classification samples")
    mse.add_argument("--known-p", action="store_true", help="Add the known-P estimator columns")
    mse.add_argument("--jobs", type=int, help="Parallel trial workers (default: all cores)")
    _add_estimator_flags(mse)
    _add_common_flags(mse)

    est = commands.add_parser(
        "estimate", help="Estimate d_eps from serialized histograms", argument_default=argparse.SUPPRESS
    )
    est.add_argument("--p-hist", type=Path, nargs="+", help="Histogram file(s) of P; two files enable split mode")
    est.add_argument("--q-hist", type=Path, nargs="+", help="Histogram file(s) of Q")
    est.add_argument("--eps", type=float, help="Epsilon")
    est.add_argument("--known-p", help="Known P: 'uniform' or 'zipf:<alpha>'")
    est.add_argument("--S", type=int, help="Alphabet size of the known P")
    est.add_argument("--out", type=Path, help="Optional CSV of the estimates")
    _add_estimator_flags(est)
    _add_common_flags(est)

    table = commands.add_parser(
        "poly-table", help="Build or validate the coefficient cache", argument_default=argparse.SUPPRESS
    )
    table.add_argument("--K", type=int, nargs="+", help="Degrees to build (at most 60)")
    _add_common_flags(table)
    return parser


def _use_cache(path: Path) -> None:
    os.environ["DPAUDIT_CACHE"] = str(path)
    get_settings.cache_clear()
    get_poly_table.cache_clear()


def parse_config(argv: Optional[Sequence[str]] = None) -> CliConfig:
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    config_path = args.pop("config", None)
    cache_path = args.pop("cache", None)
    if cache_path is not None:
        _use_cache(cache_path)
        if command == "poly-table":
            args["cache"] = cache_path
    file_values = load_config_file(config_path, command) if config_path is not None else {}
    defaults = settings_defaults(command, get_settings())
    if command == "audit" and "out" not in args and "out" not in file_values:
        mechanism = args.get("mechanism", file_values.get("mechanism", "audit"))
        defaults["out"] = get_settings().results_dir / f"{mechanism}.csv"
    config = CliConfig.build(command, defaults, file_values, args)
    PREFLIGHT[command](config.options)
    return config


def _report_audit(result: audit_run.AuditRunResult) -> int:
    report = result.report
    claimed = report.claimed
    print(
        f"\n{report.mechanism}: delta_hat({claimed.epsilon:g}) = {claimed.delta_hat:.4f} "
        f"+/- {claimed.stderr:.4f} (claimed delta {report.spec.claimed_delta:g}, "
        f"worst category '{claimed.category}', {claimed.direction})",
        flush=True,
    )
    if report.certificate is not None:
        print(
            f"Certificate: {len(report.certificate.symbols)} output(s), margin {report.certificate.margin:.4f} "
            f"-> {result.certificate_path}",
            flush=True,
        )
    print(f"Wrote {result.rows_written} rows to {result.output_path}", flush=True)
    if result.violation:
        print("VIOLATION: the estimate exceeds the claimed delta", flush=True)
        return EXIT_VIOLATION
    return EXIT_OK


def dispatch(config: CliConfig) -> int:
    print(f"=== DP Audit: {config.command} ===", flush=True)
    started = time.perf_counter()
    if config.command == "audit":
        code = _report_audit(audit_run.run(config.options))
    elif config.command == "synthetic-mse":
        result = synthetic_mse.run(config.options)
        print(f"\nWrote {result.rows_written} rows to {result.output_path}", flush=True)
        code = EXIT_OK
    elif config.command == "estimate":
        estimate_hist.run(config.options)
        code = EXIT_OK
    else:
        result = poly_table.run(config.options)
        print(f"\nCache holds {result.rows_written} entries at {result.output_path}", flush=True)
        code = EXIT_OK
    print(f"Total wall time {time.perf_counter() - started:.2f}s", flush=True)
    return code


def main(argv: Optional[List[str]] = None) -> int:
    configure_logging()
    try:
        config = parse_config(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (CliUsageError, ValidationError, AuditError, ValueError, KeyError) as exc:
        print(f"dpaudit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"dpaudit: cannot read input: {exc}", file=sys.stderr)
        return EXIT_IO

    try:
        return dispatch(config)
    except OSError as exc:
        print(f"dpaudit: IO failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except (AuditError, ValidationError, ValueError, KeyError, RuntimeError) as exc:
        logger.error("run failed: %s", exc)
        return EXIT_SOFTWARE


if __name__ == "__main__":
    sys.exit(main())
