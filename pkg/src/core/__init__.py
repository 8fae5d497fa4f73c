"""
Core Simulation Logic and Models
"""

from .schema import (
    SliceType,
    Resource,
    Phase,
    Verdict,
    SLICE_ORDER,
    RESOURCE_ORDER,
    QosTargets,
    QosAchieved,
    SliceSimConfig,
    FeasibilityReport,
    UtilityBreakdown,
    ExplanationRecord,
    CaseStudyReport
)

from .errors import (
    SliceSimError,
    ConfigError,
    ConstraintViolationError,
    PolicyNaNError,
    RolloutError,
    ReplaySchemaError
)

from .config import load_config, config_hash, apply_ablation

from .env import SlicingEnv, Allocation, check_constraints, project_shares

from .utility import gini, utility_breakdown, state_utility

__all__ = [
    # Schema
    "SliceType",
    "Resource",
    "Phase",
    "Verdict",
    "SLICE_ORDER",
    "RESOURCE_ORDER",
    "QosTargets",
    "QosAchieved",
    "SliceSimConfig",
    "FeasibilityReport",
    "UtilityBreakdown",
    "ExplanationRecord",
    "CaseStudyReport",
    # Errors
    "SliceSimError",
    "ConfigError",
    "ConstraintViolationError",
    "PolicyNaNError",
    "RolloutError",
    "ReplaySchemaError",
    # Config
    "load_config",
    "config_hash",
    "apply_ablation",
    # Environment
    "SlicingEnv",
    "Allocation",
    "check_constraints",
    "project_shares",
    # Utility
    "gini",
    "utility_breakdown",
    "state_utility"
]
