"""Domain models for the DP audit toolkit."""

from .distribution import Distribution, PrivacyPoint
from .estimator import EstimatorConfig, RegimeLabel, SplitMode
from .mechanism import (
    CategoryCatalog,
    MechanismCatalog,
    MechanismKind,
    MechanismPreset,
    MechanismSpec,
    QueryDatabasePair,
    Side,
)
from .report import AuditRecord, AuditReport, Certificate

__all__ = [
    "Distribution",
    "PrivacyPoint",
    "EstimatorConfig",
    "RegimeLabel",
    "SplitMode",
    "MechanismKind",
    "MechanismSpec",
    "MechanismPreset",
    "MechanismCatalog",
    "QueryDatabasePair",
    "CategoryCatalog",
    "Side",
    "AuditRecord",
    "AuditReport",
    "Certificate",
]
