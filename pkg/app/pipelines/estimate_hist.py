"""Estimate d_eps(P||Q) from serialized histograms."""
from __future__ import annotations

import sys
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.models import Distribution, EstimatorConfig, SplitMode
from app.pipelines.base import RunResult, record_run, write_frame_csv
from app.services.estimators import estimate, estimate_knownP, plugin_estimate
from app.services.sampling import EmpiricalHistogram, SampleSplit

ESTIMATE_COLUMNS = ["estimator", "epsilon", "n", "value"]


class EstimateOptions(BaseModel):
    """One or two histogram files per distribution; two files enable split mode."""

    model_config = ConfigDict(extra="forbid")

    p_hist: List[Path] = Field(default_factory=list, max_length=2)
    q_hist: List[Path] = Field(..., min_length=1, max_length=2)
    eps: float = Field(..., ge=0.0)
    known_p: Optional[str] = Field(None, description="'uniform' or 'zipf:<alpha>' over S symbols.")
    S: Optional[int] = Field(None, ge=1)
    c1: float = Field(4.0, gt=0.0)
    c2: float = Field(0.1, gt=0.0)
    c3: float = Field(1.5, gt=0.0)
    out: Optional[Path] = None

    @model_validator(mode="after")
    def _check_inputs(self) -> "EstimateOptions":
        if self.known_p is None and not self.p_hist:
            raise ValueError("either --p-hist or --known-p is required")
        if self.known_p is not None and self.S is None:
            raise ValueError("--known-p needs the alphabet size --S")
        if self.p_hist and len(self.p_hist) != len(self.q_hist):
            raise ValueError("--p-hist and --q-hist must list the same number of files")
        return self


@dataclass
class EstimateRunResult(RunResult):
    values: Dict[str, float]


def _read_split(paths: List[Path]) -> SampleSplit:
    return SampleSplit(tuple(EmpiricalHistogram.read(path) for path in paths))


def preflight(options: EstimateOptions) -> None:
    if options.known_p is not None:
        Distribution.from_spec(options.known_p, options.S)


def run(options: EstimateOptions) -> EstimateRunResult:
    q_split = _read_split(options.q_hist)
    config = EstimatorConfig(
        epsilon=options.eps,
        n=q_split.rate_n,
        c1=options.c1,
        c2=options.c2,
        c3=options.c3,
        split_mode=SplitMode.SPLIT if len(q_split) == 2 else SplitMode.NO_SPLIT,
    )
    use_split = config.split_mode is SplitMode.SPLIT
    q_estimate = q_split.roles(use_split)[1]
    values: Dict[str, float] = {}
    if options.p_hist:
        p_split = _read_split(options.p_hist)
        values["plugin"] = plugin_estimate(p_split.roles(use_split)[1], q_estimate, options.eps)
        values["alg2"] = estimate(p_split, q_split, config)
    if options.known_p is not None:
        P = Distribution.from_spec(options.known_p, options.S)
        values["plugin_known_p"] = plugin_estimate(P, q_estimate, options.eps)
        values["alg1"] = estimate_knownP(P, q_split, config)

    for name, value in values.items():
        print(f"  {name:<15} d_{options.eps:g} = {value:.6f}", flush=True)

    rows = 0
    if options.out is not None:
        frame = pd.DataFrame(
            [{"estimator": k, "epsilon": options.eps, "n": config.n, "value": v} for k, v in values.items()],
            columns=ESTIMATE_COLUMNS,
        )
        rows = write_frame_csv(frame, options.out)
    result = EstimateRunResult(
        job_id="estimate",
        output_path=options.out or Path("<stdout>"),
        rows_written=rows,
        finished_at=datetime.utcnow(),
        values=values,
    )
    if options.out is not None:
        record_run(result)
    return result


def main() -> None:
    from app.cli import main as cli_main

    sys.exit(cli_main(["estimate", *sys.argv[1:]]))


if __name__ == "__main__":
    main()
