"""Monte Carlo estimates of two-qubit eigenvalue-parameterized separability functions."""

from .qstate import Ensemble, Spectrum, ValidationError, is_separable, max_concurrence
from .estimator import BinnedCurve, SamplingPlan, estimate_curve
from .measures import Metric, upper_range_contribution

__version__ = "0.1.0"

__all__ = [
    "BinnedCurve",
    "Ensemble",
    "Metric",
    "SamplingPlan",
    "Spectrum",
    "ValidationError",
    "estimate_curve",
    "is_separable",
    "max_concurrence",
    "upper_range_contribution",
]
