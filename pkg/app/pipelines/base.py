"""Common helpers for audit jobs: run ledger, CSV output and phase timing."""
from __future__ import annotations

import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Iterator

import pandas as pd

from app.config import get_settings


@dataclass
class RunResult:
    job_id: str
    output_path: Path
    rows_written: int
    finished_at: datetime

    def as_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "output_path": str(self.output_path),
            "rows_written": self.rows_written,
            "finished_at": self.finished_at.isoformat(),
        }


def configure_logging() -> None:
    logging.basicConfig(
        level=logging.INFO,
        format="%(levelname)s %(asctime)s %(message)s",
        datefmt="%H:%M:%S",
    )


def write_frame_csv(frame: pd.DataFrame, output_path: Path) -> int:
    output_path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(output_path, index=False)
    return len(frame)


def update_run_ledger(result: RunResult, ledger_path: Path) -> None:
    ledger_path.parent.mkdir(parents=True, exist_ok=True)
    entries = {}
    if ledger_path.exists():
        with ledger_path.open("r", encoding="utf-8") as handle:
            entries = json.load(handle)
    entries[result.job_id] = result.as_dict()
    with ledger_path.open("w", encoding="utf-8") as handle:
        json.dump(entries, handle, indent=2, sort_keys=True)


def record_run(result: RunResult) -> None:
    settings = get_settings()
    if settings.record_runs:
        update_run_ledger(result, settings.run_ledger_path)


@contextmanager
def phase(name: str) -> Iterator[None]:
    """Print the wall time spent in ``name``."""
    print(f"  {name} ...", flush=True)
    started = time.perf_counter()
    yield
    print(f"  {name} done in {time.perf_counter() - started:.2f}s", flush=True)
