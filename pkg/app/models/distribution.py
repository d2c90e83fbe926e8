"""Finite discrete distributions and privacy points."""
from __future__ import annotations

from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

DEFAULT_TOLERANCE = 1e-9


class Distribution(BaseModel):
    """Probability vector over dense symbol ids 0..S-1."""

    model_config = ConfigDict(frozen=True)

    probs: List[float] = Field(..., min_length=1, description="Probability of each symbol id.")
    tolerance: float = Field(
        DEFAULT_TOLERANCE,
        ge=0.0,
        description="Allowed deviation of the total mass from 1.",
    )

    @model_validator(mode="after")
    def _check_mass(self) -> "Distribution":
        probs = np.asarray(self.probs, dtype=float)
        if not np.all(np.isfinite(probs)):
            raise ValueError("probabilities must be finite")
        if np.any(probs < 0):
            raise ValueError("probabilities must be non-negative")
        total = float(np.sum(probs))
        if abs(total - 1.0) > self.tolerance:
            raise ValueError(f"probabilities sum to {total!r}, outside tolerance {self.tolerance}")
        return self

    @property
    def size(self) -> int:
        return len(self.probs)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)

    def support(self) -> np.ndarray:
        return np.flatnonzero(self.as_array() > 0)

    @classmethod
    def uniform(cls, size: int) -> "Distribution":
        if size < 1:
            raise ValueError("alphabet size must be at least 1")
        return cls(probs=[1.0 / size] * size)

    @classmethod
    def zipf(cls, size: int, alpha: float) -> "Distribution":
        """Weights proportional to 1 / i**alpha for i = 1..size."""
        if size < 1:
            raise ValueError("alphabet size must be at least 1")
        weights = np.arange(1, size + 1, dtype=float) ** (-alpha)
        return cls(probs=(weights / weights.sum()).tolist())

    @classmethod
    def from_spec(cls, spec: str, size: int) -> "Distribution":
        """Parse ``uniform`` or ``zipf:<alpha>``."""
        name, _, arg = spec.partition(":")
        name = name.strip().lower()
        if name == "uniform" and not arg:
            return cls.uniform(size)
        if name == "zipf" and arg:
            return cls.zipf(size, float(arg))
        raise ValueError(f"Unknown distribution spec '{spec}' (expected 'uniform' or 'zipf:<alpha>')")


class PrivacyPoint(BaseModel):
    """An (epsilon, delta) pair."""

    model_config = ConfigDict(frozen=True)

    epsilon: float = Field(..., ge=0.0)
    delta: float = Field(..., ge=0.0, le=1.0)
