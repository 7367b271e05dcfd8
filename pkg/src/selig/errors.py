"""Exception hierarchy shared across the package."""


class SeligError(Exception):
    """Base class for all package errors."""


class ValidationError(SeligError):
    """Input data or configuration failed validation (CLI exit code 2)."""


class MalformedRow(ValidationError):
    """A CSV row carries a non-binary flag or a non-numeric value."""


class EligibilityViolation(ValidationError):
    """Eligibility is non-monotone or the first period is missing."""


class PresenceViolation(ValidationError):
    """Treatment/outcome/covariate present where ineligible, or absent where eligible."""


class DuplicateKey(ValidationError):
    """Repeated (unit, time) pair in the input."""


class EstimationError(SeligError):
    """Numerical failure while estimating (CLI exit code 3)."""


class DegenerateFit(EstimationError):
    """A learner was asked to fit on an empty or unusable training set."""


class ShapeMismatch(EstimationError):
    """Design matrix columns do not match the fitted coefficients."""


class EmptyRiskSet(EstimationError):
    """A required training subset contained no rows."""


class DegenerateDenominator(EstimationError):
    """An eligibility denominator fell below the 1e-8 guard."""


class OverlapViolation(EstimationError):
    """An exact-population treatment probability sits on the boundary {0, 1}."""


class TooManyFailedReplicates(EstimationError):
    """More than 10% of bootstrap replicates failed."""


class PolicyError(ValidationError):
    """A treatment policy is malformed or queried outside its support."""
