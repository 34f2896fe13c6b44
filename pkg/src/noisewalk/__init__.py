"""Coupled random walks on free groups and free semigroups.

A step measure mu on the generators drives a pair walk with tunable
noise: with probability 1 - rho both coordinates move together through
the diagonal coupling of mu, and with probability rho they move
independently.  The package computes the
walk's drift, its asymptotic entropy, the total-variation distance
between the coupled n-step law and that of two independent walks, and
the local dimension of the exit measure on the product boundary, by a
mix of exact convolution arithmetic, closed forms for uniform semigroup
steps, and seeded Monte Carlo.
"""

from .boundary import (
    BoundarySample,
    BoundarySampleSet,
    CylinderTree,
    DimensionGapReport,
    ball_measure,
    build_tree,
    dimension_singularity_check,
    local_dimension,
    sample_boundary,
)
from .errors import (
    BudgetError,
    InputError,
    NoiseWalkError,
    TruncationError,
    UnsupportedRegimeError,
    ValidationError,
)
from .estimators import (
    EntropyCurve,
    EstimateResult,
    RhoStarEstimate,
    SweepRow,
    SweepTable,
    drift_mc,
    entropy_exact_curve,
    entropy_rate_estimate,
    rho_star_estimate,
    rho_sweep,
    shannon_pointwise,
    tv_exact,
    tv_lower_bound_mc,
)
from .measures import (
    ConvolutionLevel,
    ConvolutionResult,
    FiniteMeasure,
    build_measure,
    build_pi_rho,
    certified_entropy_compare,
    convolve_power,
    entropy_mass_spec,
    first_moment,
    iter_convolution_levels,
    load_measure,
    marginals,
    measure_from_json_dict,
    measure_to_json_dict,
    product_measure,
    sample_path,
    save_measure,
    shannon_entropy,
    tv_distance,
    uniform_letter_count,
    uniform_measure,
)
from .oracle import (
    coupling_weights,
    drift_free_group_srw,
    h_semigroup,
    h_semigroup_derivative,
    tv_semigroup,
)
from .words import (
    common_prefix_length,
    distance,
    gromov_product,
    inverse,
    multiply,
    pair_distance,
    pair_gromov_product,
    pair_length,
    pair_multiply,
    reduce_word,
    word_length,
)

__version__ = "0.1.0"

__all__ = [
    "BoundarySample",
    "BoundarySampleSet",
    "BudgetError",
    "ConvolutionLevel",
    "ConvolutionResult",
    "CylinderTree",
    "DimensionGapReport",
    "EntropyCurve",
    "EstimateResult",
    "FiniteMeasure",
    "InputError",
    "NoiseWalkError",
    "RhoStarEstimate",
    "SweepRow",
    "SweepTable",
    "TruncationError",
    "UnsupportedRegimeError",
    "ValidationError",
    "ball_measure",
    "build_measure",
    "build_pi_rho",
    "build_tree",
    "certified_entropy_compare",
    "common_prefix_length",
    "convolve_power",
    "coupling_weights",
    "dimension_singularity_check",
    "distance",
    "drift_free_group_srw",
    "drift_mc",
    "entropy_exact_curve",
    "entropy_mass_spec",
    "entropy_rate_estimate",
    "first_moment",
    "gromov_product",
    "h_semigroup",
    "h_semigroup_derivative",
    "inverse",
    "iter_convolution_levels",
    "load_measure",
    "local_dimension",
    "marginals",
    "measure_from_json_dict",
    "measure_to_json_dict",
    "multiply",
    "pair_distance",
    "pair_gromov_product",
    "pair_length",
    "pair_multiply",
    "product_measure",
    "reduce_word",
    "rho_star_estimate",
    "rho_sweep",
    "sample_boundary",
    "sample_path",
    "save_measure",
    "shannon_entropy",
    "shannon_pointwise",
    "tv_distance",
    "tv_exact",
    "tv_lower_bound_mc",
    "tv_semigroup",
    "uniform_letter_count",
    "uniform_measure",
    "word_length",
]
