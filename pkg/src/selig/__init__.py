"""Longitudinal causal inference under selective eligibility.

Estimates time-specific eligible treatment effects and expected cumulative
outcomes under treatment strategies, with outcome-regression, IPW, and
doubly robust estimators, unit-level bootstrap inference, an exact
enumeration / Monte Carlo oracle, and a simulation lab.
"""

from .errors import (
    DegenerateDenominator,
    DegenerateFit,
    DuplicateKey,
    EligibilityViolation,
    EmptyRiskSet,
    EstimationError,
    MalformedRow,
    OverlapViolation,
    PolicyError,
    PresenceViolation,
    SeligError,
    ShapeMismatch,
    TooManyFailedReplicates,
    ValidationError,
)
from .estimands import EligSpec, MeanSpec, TauSpec, ThetaSpec, parse_estimand
from .estimators import (
    EstimateReport,
    estimate_eoe,
    estimate_ete,
    estimate_request,
)
from .inference import BootstrapSpec, bootstrap
from .nuisance import FittedNuisances, LearnerConfig, make_bundle
from .panel import (
    CovariateSchema,
    PanelDataset,
    TreatmentHistory,
    load_csv,
    risk_set,
    save_csv,
)
from .policy import Policy, parse_policy

__version__ = "0.1.0"

__all__ = [
    "BootstrapSpec",
    "CovariateSchema",
    "DegenerateDenominator",
    "DegenerateFit",
    "DuplicateKey",
    "EligSpec",
    "EligibilityViolation",
    "EmptyRiskSet",
    "EstimateReport",
    "EstimationError",
    "FittedNuisances",
    "LearnerConfig",
    "MalformedRow",
    "MeanSpec",
    "OverlapViolation",
    "PanelDataset",
    "Policy",
    "PolicyError",
    "PresenceViolation",
    "SeligError",
    "ShapeMismatch",
    "TauSpec",
    "ThetaSpec",
    "TooManyFailedReplicates",
    "TreatmentHistory",
    "ValidationError",
    "bootstrap",
    "estimate_eoe",
    "estimate_ete",
    "estimate_request",
    "load_csv",
    "make_bundle",
    "parse_estimand",
    "parse_policy",
    "risk_set",
    "save_csv",
    "__version__",
]
