"""Audit one mechanism of the zoo and write its (epsilon, delta_hat) region."""
from __future__ import annotations

import logging
import sys
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from app.errors import DomainError
from app.models import AuditReport, EstimatorConfig, MechanismSpec, QueryDatabasePair, SplitMode
from app.models.mechanism import SUPPORTED_QUERY_COUNTS
from app.pipelines.base import RunResult, phase, record_run
from app.services import audit, data_loader
from app.services.mechanisms import compatible_pairs, validate_pair
from app.services.poly_cache import get_poly_table

logger = logging.getLogger(__name__)


class AuditOptions(BaseModel):
    """Validated parameters of one audit run."""

    model_config = ConfigDict(extra="forbid")

    mechanism: str
    eps0: Optional[float] = Field(None, gt=0.0, description="Overrides the preset's claimed epsilon.")
    delta0: Optional[float] = Field(None, ge=0.0, le=1.0)
    bound: Optional[int] = Field(None, ge=1)
    n: float = Field(..., gt=1.0)
    trials: int = Field(..., ge=1)
    seed: int = Field(0, ge=0)
    out: Path
    categories: Optional[List[str]] = None
    query_count: List[int] = Field(default_factory=lambda: [5], description="Compositions audited together.")
    eps_grid: Optional[List[float]] = None
    grid_points: int = Field(21, ge=2)
    grid_max: float = Field(1.0, gt=0.0)
    c1: float = Field(4.0, gt=0.0)
    c2: float = Field(0.1, gt=0.0)
    c3: float = Field(0.9, gt=0.0)
    split: bool = False
    jobs: Optional[int] = Field(None, ge=1)
    bin_width: float = Field(0.1, gt=0.0)
    violation_tolerance: float = Field(0.02, ge=0.0)

    @field_validator("query_count", mode="before")
    @classmethod
    def _as_count_list(cls, value):
        return [value] if isinstance(value, int) else value

    @field_validator("query_count")
    @classmethod
    def _check_counts(cls, value: List[int]) -> List[int]:
        unsupported = sorted(set(value) - set(SUPPORTED_QUERY_COUNTS))
        if not value or unsupported:
            raise ValueError(f"query counts must be drawn from {SUPPORTED_QUERY_COUNTS}, got {value}")
        return sorted(set(value))

    def grid(self) -> List[float]:
        if self.eps_grid:
            return sorted(set(self.eps_grid))
        return audit.default_eps_grid(self.grid_points, self.grid_max)

    def estimator_config(self, epsilon: float) -> EstimatorConfig:
        return EstimatorConfig(
            epsilon=epsilon,
            n=self.n,
            c1=self.c1,
            c2=self.c2,
            c3=self.c3,
            split_mode=SplitMode.SPLIT if self.split else SplitMode.NO_SPLIT,
        )


@dataclass
class AuditRunResult(RunResult):
    report: AuditReport
    violation: bool
    certificate_path: Path


def resolve_spec(options: AuditOptions) -> MechanismSpec:
    preset = data_loader.load_mechanism_catalog().get(options.mechanism)
    overrides = {
        key: value
        for key, value in (("epsilon0", options.eps0), ("delta0", options.delta0), ("bound", options.bound))
        if value is not None
    }
    return MechanismSpec.model_validate({**preset.spec.model_dump(), **overrides})


def select_pairs(options: AuditOptions, spec: MechanismSpec) -> List[QueryDatabasePair]:
    """Named categories must all suit ``spec``; without names the compatible presets are kept."""
    pairs = data_loader.load_pairs(options.categories, options.query_count)
    if options.categories:
        for pair in pairs:
            validate_pair(spec, pair)
    else:
        pairs = compatible_pairs(spec, pairs)
    if not pairs:
        raise DomainError(f"no database category is compatible with {spec.label}")
    return pairs


def preflight(options: AuditOptions) -> None:
    """Resolve the preset, categories and estimator constants before any sampling."""
    spec = resolve_spec(options)
    select_pairs(options, spec)
    options.estimator_config(spec.epsilon0)


def companion_paths(out: Path) -> tuple[Path, Path]:
    """(certificate file, per-category CSV) next to the report."""
    return out.with_suffix(".certificate.txt"), out.with_suffix(".categories.csv")


def run(options: AuditOptions) -> AuditRunResult:
    spec = resolve_spec(options)
    pairs = select_pairs(options, spec)
    config = options.estimator_config(spec.epsilon0)
    grid = options.grid()

    print(f"Stage 1: coefficient table for K={config.degree}...", flush=True)
    with phase("coefficients"):
        get_poly_table().warm([config.degree])

    print(
        f"Stage 2: {options.trials} trial(s) x {len(pairs)} categor{'y' if len(pairs) == 1 else 'ies'} "
        f"at n={options.n:g}, {len(grid)} epsilon values...",
        flush=True,
    )
    with phase("trials"):
        report = audit.run_audit(
            spec,
            pairs,
            grid,
            options.n,
            options.trials,
            options.seed,
            config,
            jobs=options.jobs,
            bin_width=options.bin_width,
            mechanism_id=options.mechanism,
            violation_tolerance=options.violation_tolerance,
        )

    certificate_path, category_path = companion_paths(options.out)
    print(f"Stage 3: writing report to {options.out}...", flush=True)
    with phase("write"):
        rows = audit.write_report_csv(report, options.out)
        audit.write_category_csv(report, category_path)
        audit.write_certificate(report, certificate_path)

    result = AuditRunResult(
        job_id=f"audit:{options.mechanism}",
        output_path=options.out,
        rows_written=rows,
        finished_at=datetime.utcnow(),
        report=report,
        violation=report.is_violation(options.violation_tolerance),
        certificate_path=certificate_path,
    )
    record_run(result)
    return result


def main() -> None:
    from app.cli import main as cli_main

    sys.exit(cli_main(["audit", *sys.argv[1:]]))


if __name__ == "__main__":
    main()
