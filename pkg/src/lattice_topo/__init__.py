"""Persistent homology, convex-peel summaries and Gaussian-field theory for
scalar fields on 2-D lattices."""

from .diagrams import (
    DegenerateHullError,
    PeelSummary,
    bottleneck_distance,
    convex_peel,
    distance_matrix,
    peel_summary,
    wasserstein_distance,
)
from .grid import (
    EmpiricalCorrelation,
    FieldFormatError,
    RankDeficientError,
    ScalarField,
    detrend_polynomial,
    empirical_correlation,
    load_field,
    marginal_gaussianize,
    save_field,
    split_subsets,
)
from .homology import (
    BettiCurve,
    FeatureKind,
    Neighborhood,
    PersistenceDiagram,
    PersistencePair,
    betti_curve,
    count_local_extrema,
    cumulative_count_curve,
    sublevel_components,
    sublevel_holes,
)
from .inference import (
    ComparisonReport,
    GofReport,
    compare_fields,
    gof_grf,
    summary_battery,
    wilcoxon_rank_sum,
)
from .models import ModelId, ModelSpec, match_parameters, simulate_grf, simulate_model
from .mvn import MvnResult, mvn_cdf, orthant_probability
from .theory import (
    CorrelationModel,
    ExtremaMoments,
    expected_extrema,
    extrema_moments,
    extrema_variance,
    extremum_probability,
    pair_indicator_expectation,
)

__version__ = "0.1.0"
