"""Estimator configuration and regime labels."""
from __future__ import annotations

import logging
import math
from enum import Enum

from pydantic import BaseModel, ConfigDict, Field, model_validator

logger = logging.getLogger(__name__)

MAX_DEGREE = 60
# c2 / c1 < 8 / (sqrt(2) + 1)^2 - 1 keeps Algorithm 2's good event consistent
CONSTANT_RATIO_LIMIT = 8.0 / (math.sqrt(2.0) + 1.0) ** 2 - 1.0


class SplitMode(str, Enum):
    SPLIT = "split"
    NO_SPLIT = "no_split"


class RegimeLabel(str, Enum):
    """Per-symbol branch of the estimators."""

    SMOOTH_BELOW = "smooth_below"
    SMOOTH_ABOVE = "smooth_above"
    NON_SMOOTH_SMALL = "non_smooth_small"
    NON_SMOOTH_LARGE = "non_smooth_large"


class EstimatorConfig(BaseModel):
    """Constants shared by Algorithm 1 and Algorithm 2."""

    model_config = ConfigDict(frozen=True)

    epsilon: float = Field(..., ge=0.0)
    n: float = Field(..., gt=1.0, description="Nominal Poisson sample size.")
    c1: float = Field(4.0, gt=0.0)
    c2: float = Field(0.1, gt=0.0)
    c3: float = Field(1.5, gt=0.0)
    split_mode: SplitMode = SplitMode.NO_SPLIT

    @model_validator(mode="after")
    def _check_constants(self) -> "EstimatorConfig":
        if not math.isfinite(self.epsilon):
            raise ValueError("epsilon must be finite")
        if self.c2 >= self.c1:
            raise ValueError(f"c2 ({self.c2}) must be smaller than c1 ({self.c1})")
        degree = self.degree
        if degree < 1:
            raise ValueError(f"degree floor(c3 ln n) = {degree} must be at least 1")
        if degree > MAX_DEGREE:
            raise ValueError(f"degree {degree} exceeds the numerical stability limit {MAX_DEGREE}")
        if self.c2 / self.c1 >= CONSTANT_RATIO_LIMIT:
            logger.warning(
                "c2/c1 = %.3f is above %.3f; Algorithm 2's error guarantee does not apply",
                self.c2 / self.c1,
                CONSTANT_RATIO_LIMIT,
            )
        return self

    @property
    def log_n(self) -> float:
        return math.log(self.n)

    @property
    def degree(self) -> int:
        return int(math.floor(self.c3 * math.log(self.n)))

    @property
    def delta_width(self) -> float:
        """Delta = c1 ln n / n, the half-side of the small-mass box."""
        return self.c1 * self.log_n / self.n

    @property
    def exp_epsilon(self) -> float:
        return math.exp(self.epsilon)

    def at_epsilon(self, epsilon: float) -> "EstimatorConfig":
        return EstimatorConfig.model_validate({**self.model_dump(), "epsilon": epsilon})
