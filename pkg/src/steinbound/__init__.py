"""Semi-empirical Efron-Stein concentration and PAC-Bayes bounds for weighted
importance sampling, with Monte Carlo coverage checks."""
from ._base import (
    AbsoluteContinuityError,
    BoundReport,
    CategoricalDistribution,
    DegenerateSampleError,
    EnumerationLimitError,
    NumericalOverflowError,
    PreconditionError,
    ProxyEstimate,
    SteinboundError,
)

__version__ = "0.1.0"
