"""Multivariate ranks and quantiles from semi-discrete optimal transport."""

from .gof import (
    IndependenceReport,
    TwoSampleReport,
    independence_statistic,
    independence_test,
    normalized_statistic,
    null_harness,
    permutation_pvalue,
    two_sample_exact_2d,
    two_sample_statistic,
    two_sample_test,
)
from .maps import (
    RankCertificateError,
    conjugate,
    depth,
    duality_gap,
    local_sup_deviation,
    psi_rate,
    quantile,
    randomized_ranks,
    rank,
    rank_at_sample,
)
from .potential import PiecewiseAffinePotential, PowerCell
from .reference import ReferenceMeasure
from .solver import (
    ConvergenceError,
    DuplicatePointsError,
    FittedTransport,
    SolverConfig,
    cell_measures,
    dual_objective,
    fit,
    fit_empirical,
    transport_cost,
)

__all__ = [
    "ConvergenceError",
    "DuplicatePointsError",
    "FittedTransport",
    "IndependenceReport",
    "PiecewiseAffinePotential",
    "PowerCell",
    "RankCertificateError",
    "ReferenceMeasure",
    "SolverConfig",
    "TwoSampleReport",
    "cell_measures",
    "conjugate",
    "depth",
    "dual_objective",
    "duality_gap",
    "fit",
    "fit_empirical",
    "independence_statistic",
    "independence_test",
    "local_sup_deviation",
    "normalized_statistic",
    "null_harness",
    "permutation_pvalue",
    "psi_rate",
    "quantile",
    "randomized_ranks",
    "rank",
    "rank_at_sample",
    "transport_cost",
    "two_sample_exact_2d",
    "two_sample_statistic",
    "two_sample_test",
]

__version__ = "0.1.0"
