"""Mechanism zoo and neighbouring-database models."""
from __future__ import annotations

from enum import Enum
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

BASELINE_ANSWER = 1
SUPPORTED_QUERY_COUNTS = (5, 10)


class MechanismKind(str, Enum):
    RNA_LAP = "rna-lap"
    RNA_EXP = "rna-exp"
    RNM_LAP = "rnm-lap"
    RNM_EXP = "rnm-exp"
    HISTOGRAM = "histogram"
    HISTOGRAM_WRONG_NOISE = "histogram-wrong-noise"
    SVT = "svt"
    ISVT1 = "isvt1"
    ISVT2 = "isvt2"
    ISVT3 = "isvt3"
    TGM = "tgm"
    MTGM = "mtgm"

    @property
    def is_histogram(self) -> bool:
        return self in (MechanismKind.HISTOGRAM, MechanismKind.HISTOGRAM_WRONG_NOISE)

    @property
    def is_sparse_vector(self) -> bool:
        return self in (MechanismKind.SVT, MechanismKind.ISVT1, MechanismKind.ISVT2, MechanismKind.ISVT3)

    @property
    def is_geometric(self) -> bool:
        return self in (MechanismKind.TGM, MechanismKind.MTGM)

    @property
    def has_continuous_output(self) -> bool:
        return self in (MechanismKind.RNM_LAP, MechanismKind.RNM_EXP) or self.is_histogram


class Side(str, Enum):
    D = "D"
    DPRIME = "Dprime"


class MechanismSpec(BaseModel):
    """A mechanism together with the privacy budget it claims."""

    model_config = ConfigDict(frozen=True)

    kind: MechanismKind
    epsilon0: float = Field(..., gt=0.0, description="Claimed privacy budget.")
    delta0: float = Field(0.0, ge=0.0, le=1.0, description="Mixing probability for MTGM.")
    bound: int = Field(1, ge=1, description="Number of true answers before SVT stops.")
    threshold: float = Field(1.0, description="SVT threshold T.")

    @property
    def claimed_delta(self) -> float:
        return self.delta0 if self.kind is MechanismKind.MTGM else 0.0

    @property
    def label(self) -> str:
        return self.kind.value


class MechanismPreset(BaseModel):
    id: str = Field(..., description="Stable identifier used on the command line.")
    description: Optional[str] = None
    spec: MechanismSpec


class MechanismCatalog(BaseModel):
    """Collection wrapper for the preset mechanism zoo."""

    mechanisms: List[MechanismPreset]

    def get(self, mechanism_id: str) -> MechanismPreset:
        for preset in self.mechanisms:
            if preset.id == mechanism_id:
                return preset
        raise KeyError(f"Mechanism '{mechanism_id}' not found.")

    def list_ids(self) -> List[str]:
        return [preset.id for preset in self.mechanisms]


class QueryDatabasePair(BaseModel):
    """True query answers on two neighbouring databases."""

    model_config = ConfigDict(frozen=True)

    category: str
    answers_d: List[int] = Field(..., min_length=1)
    answers_dprime: List[int] = Field(..., min_length=1)

    @model_validator(mode="after")
    def _check_lengths(self) -> "QueryDatabasePair":
        if len(self.answers_d) != len(self.answers_dprime):
            raise ValueError(
                f"answer vectors differ in length ({len(self.answers_d)} vs {len(self.answers_dprime)})"
            )
        return self

    @property
    def query_count(self) -> int:
        return len(self.answers_d)

    def answers(self, side: Side) -> Tuple[int, ...]:
        return tuple(self.answers_d if side is Side.D else self.answers_dprime)

    def differing_coordinates(self) -> Tuple[int, ...]:
        return tuple(
            i for i, (a, b) in enumerate(zip(self.answers_d, self.answers_dprime)) if a != b
        )

    def is_histogram_neighbour(self) -> bool:
        """True when the answers differ in at most one coordinate by at most 1."""
        diffs = self.differing_coordinates()
        if len(diffs) > 1:
            return False
        return all(abs(self.answers_d[i] - self.answers_dprime[i]) <= 1 for i in diffs)

    def with_query_count(self, count: int) -> "QueryDatabasePair":
        """Pad both answer vectors with the baseline answer up to ``count`` queries.

        Padded copies are renamed so several compositions can share one audit.
        """
        if count < self.query_count:
            raise ValueError(f"cannot shrink {self.query_count} queries to {count}")
        pad = [BASELINE_ANSWER] * (count - self.query_count)
        name = self.category if count == self.query_count else f"{self.category} ({count} queries)"
        return QueryDatabasePair(
            category=name,
            answers_d=list(self.answers_d) + pad,
            answers_dprime=list(self.answers_dprime) + pad,
        )


class CategoryCatalog(BaseModel):
    """Neighbouring-database categories shipped as presets."""

    categories: List[QueryDatabasePair]

    def get(self, name: str) -> QueryDatabasePair:
        for pair in self.categories:
            if pair.category == name:
                return pair
        raise KeyError(f"Category '{name}' not found.")

    def list_names(self) -> List[str]:
        return [pair.category for pair in self.categories]
