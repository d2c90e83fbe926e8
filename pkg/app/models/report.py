"""Audit report models."""
from __future__ import annotations

from typing import Dict, List, Optional

import pandas as pd
from pydantic import BaseModel, Field

from app.models.estimator import EstimatorConfig
from app.models.mechanism import MechanismSpec

REPORT_COLUMNS = ["epsilon", "delta_hat", "stderr", "trials", "n", "category"]
FORWARD = "D->Dprime"
BACKWARD = "Dprime->D"


class AuditRecord(BaseModel):
    """Mean estimate over trials for one epsilon."""

    epsilon: float
    delta_hat: float = Field(..., ge=0.0, le=1.0)
    stderr: float = Field(..., ge=0.0)
    trials: int = Field(..., ge=1)
    n: float
    category: str
    direction: str = Field(..., description="Ordered pair the estimate refers to.")

    def exceeds(self, delta: float, tolerance: float = 0.0) -> bool:
        """True when the mean clears delta by more than three standard errors and ``tolerance``."""
        return self.delta_hat - delta > max(3.0 * self.stderr, tolerance)


class Certificate(BaseModel):
    """Output set witnessing a violation of the claimed (epsilon, delta)."""

    epsilon: float
    delta: float
    category: str
    direction: str
    trials: int = Field(..., ge=1, description="Trials pooled into the histograms.")
    symbols: List[int] = Field(..., description="Symbol ids with positive empirical margin.")
    raw_outputs: List[str] = Field(default_factory=list, description="Mechanism outputs behind each symbol.")
    margin: float = Field(..., description="P_hat(T) - e^eps Q_hat(T) - delta.")
    rate_n: float
    p_counts: Dict[int, int]
    q_counts: Dict[int, int]


class AuditReport(BaseModel):
    """Estimated privacy region of one mechanism."""

    mechanism: str
    spec: MechanismSpec
    config: EstimatorConfig
    n: float
    trials: int
    seed: int
    directions: List[str] = Field(default_factory=lambda: [FORWARD, BACKWARD])
    records: List[AuditRecord] = Field(..., description="Largest estimate over categories per epsilon.")
    category_records: List[AuditRecord]
    claimed: AuditRecord = Field(..., description="Summary record at the claimed epsilon0.")
    certificate: Optional[Certificate] = None
    monotonicity_flags: List[float] = Field(
        default_factory=list,
        description="Epsilons where the curve rises by more than two standard errors.",
    )

    def delta_hat_at(self, epsilon: float) -> float:
        for record in self.records:
            if abs(record.epsilon - epsilon) <= 1e-12:
                return record.delta_hat
        if abs(self.claimed.epsilon - epsilon) <= 1e-12:
            return self.claimed.delta_hat
        raise KeyError(f"epsilon {epsilon} not on the audit grid")

    def smallest_epsilon_below(self, threshold: float) -> Optional[float]:
        for record in sorted(self.records, key=lambda r: r.epsilon):
            if record.delta_hat <= threshold:
                return record.epsilon
        return None

    def is_violation(self, tolerance: float = 0.0) -> bool:
        return self.claimed.exceeds(self.spec.claimed_delta, tolerance)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.model_dump() for r in self.records], columns=REPORT_COLUMNS)

    def category_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [r.model_dump() for r in self.category_records],
            columns=REPORT_COLUMNS + ["direction"],
        )
