"""Application configuration settings."""
from functools import lru_cache
from pathlib import Path
from typing import Optional

from pydantic import AliasChoices, Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Central configuration for the DP audit toolkit."""

    data_dir: Path = Path("data")
    cache_path: Optional[Path] = Field(
        default=Path("data") / "polycache.txt",
        validation_alias=AliasChoices("DPAUDIT_CACHE", "DPAUDIT_CACHE_PATH", "cache_path"),
        description="Coefficient table location; unset disables persistence.",
    )
    record_runs: bool = True

    # Estimator constants
    c1: float = 4.0
    c2: float = 0.1
    c3_synthetic: float = 1.5
    c3_audit: float = 0.9

    # Experiment defaults
    default_n: float = 100_000
    synthetic_trials: int = 100
    audit_trials: int = 10
    audit_grid_points: int = 21
    audit_grid_max: float = 1.0
    bin_width: float = 0.1
    violation_tolerance: float = 0.02
    jobs: Optional[int] = None

    # HTTP surface
    api_max_samples: float = 2_000_000

    model_config = SettingsConfigDict(
        env_prefix="DPAUDIT_",
        env_file=".env",
        env_file_encoding="utf-8",
        populate_by_name=True,
    )

    @property
    def mechanisms_path(self) -> Path:
        return self.data_dir / "mechanisms.json"

    @property
    def categories_path(self) -> Path:
        return self.data_dir / "database_pairs.json"

    @property
    def run_ledger_path(self) -> Path:
        return self.data_dir / "runs.json"

    @property
    def results_dir(self) -> Path:
        return self.data_dir / "results"


@lru_cache(1)
def get_settings() -> Settings:
    return Settings()
