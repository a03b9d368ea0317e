"""Exception taxonomy shared across the package.

ValidationError covers bad inputs detected before any estimation starts
(schema mismatches, cyclic orderings, cap violations). EstimatorError covers
failures of the estimation machinery itself (sampling guards, unusable
conditioning sets). The CLI maps these to distinct exit codes.
"""


class AsymshapError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(AsymshapError):
    """Invalid input: schema, config, or argument checks failed."""


class SchemaError(ValidationError):
    """Data does not match its declared schema."""


class CyclicOrderingError(ValidationError):
    """Precedence constraints contain a cycle; no consistent permutation exists."""


class EnumerationCapError(ValidationError):
    """Exact enumeration requested above the configured feature cap; use sampling."""


class EstimatorError(AsymshapError):
    """An estimator could not produce a value."""


class SamplingBudgetError(EstimatorError):
    """Rejection sampling exhausted its attempt budget.

    Raised with a diagnostic suggesting exact enumeration or reformulating
    edge constraints as ordered groups.
    """


class DegenerateDataError(ValidationError):
    """Training data cannot support fitting (e.g. a single label class)."""
