"""Build or validate the polynomial coefficient cache."""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from app.errors import DomainError
from app.models.estimator import MAX_DEGREE
from app.pipelines.base import RunResult, phase, record_run
from app.services.poly_cache import ABS_ID, CoeffCache, PolyTable, TableEntry, get_poly_table


class PolyTableOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    K: List[int] = Field(..., min_length=1, description="Degrees to build.")
    cache: Optional[Path] = None

    @field_validator("K")
    @classmethod
    def _check_degrees(cls, degrees: List[int]) -> List[int]:
        for degree in degrees:
            if degree < 1:
                raise ValueError(f"degree must be at least 1, got {degree}")
        return degrees


@dataclass
class PolyTableRunResult(RunResult):
    entries: List[TableEntry] = field(default_factory=list)


def check_stability_guard(degrees: List[int]) -> None:
    too_large = [d for d in degrees if d > MAX_DEGREE]
    if too_large:
        raise DomainError(
            f"refusing degree(s) {too_large}: above {MAX_DEGREE} the monomial coefficients "
            "grow past the numerical stability guard"
        )


def preflight(options: PolyTableOptions) -> None:
    check_stability_guard(options.K)


def run(options: PolyTableOptions) -> PolyTableRunResult:
    check_stability_guard(options.K)
    table = PolyTable(CoeffCache(options.cache)) if options.cache else get_poly_table()
    print(f"Stage 1: building coefficient table for K={sorted(set(options.K))}...", flush=True)
    with phase("coefficients"):
        entries = table.warm(options.K)
    for entry in entries:
        scaled = f"  K*sup={entry.scaled_error:.4f}" if entry.function_id == ABS_ID else ""
        print(f"  {entry.function_id:<16} K={entry.degree:<3d} sup_error={entry.sup_error:.3e}{scaled}", flush=True)

    path = table.cache.path or Path("<memory>")
    result = PolyTableRunResult(
        job_id="poly-table",
        output_path=path,
        rows_written=len(table.cache.keys()),
        finished_at=datetime.utcnow(),
        entries=entries,
    )
    record_run(result)
    return result


def main() -> None:
    from app.cli import main as cli_main

    sys.exit(cli_main(["poly-table", *sys.argv[1:]]))


if __name__ == "__main__":
    main()
