"""Two-level parametric quantile regression coefficient models for panel data.

The response quantiles follow x'theta b(u) within clusters with cluster
effects whose quantile function is z'phi c(v); both are estimated jointly by
a penalized fixed-effects integrated-loss criterion with analytic standard
errors, a bootstrap Kolmogorov-Smirnov goodness-of-fit test, AIC/BIC model
selection, and a reproducible Monte Carlo harness.
"""

from ._panelq import (
    DataError,
    Dataset,
    DiagError,
    EstimError,
    Fit,
    InferError,
    JsonIoError,
    SimError,
    SpecError,
    builtin_scenarios,
    fit,
    from_arrays,
    mc_study,
    read_csv,
    simulate,
)

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "Dataset",
    "DiagError",
    "EstimError",
    "Fit",
    "InferError",
    "JsonIoError",
    "SimError",
    "SpecError",
    "builtin_scenarios",
    "fit",
    "from_arrays",
    "mc_study",
    "read_csv",
    "simulate",
    "__version__",
]
