"""Producer-side experiment design for ranking systems.

Reranking designs that blend per-arm counterfactual rankings, the
score-normalization and small-ramp baselines, inaccuracy/cost metrics,
synthetic evaluation environments, and executable optimality and
moment-bound checks.
"""

__version__ = "0.1.0"

from .allocation import (
    MixingSelection,
    TreatmentAllocation,
    assign,
    sample_alpha_producers,
    sample_p0_star,
    validate_fractions,
)
from .core import (
    MINUS_INF,
    CostLedger,
    CountedModel,
    ItemId,
    ProducerId,
    Session,
    TiePolicy,
    ideal_rank,
    is_permutation,
    rank_by_scores,
)
from .designs import (
    CandidateGenerator,
    DesignConfig,
    DesignOutput,
    MixingMode,
    candgen_rank,
    oasis_rank,
    small_ramp_rank,
    unicorn_multi_rank,
    unicorn_rank,
)
from .metrics import (
    BoundReport,
    PositionErrorProfile,
    analytic_cost,
    bias_bound,
    bound_report,
    inaccuracy,
    position_errors,
    variance_bound,
)
from .rng import derive_rng
from .simulation import (
    AteResult,
    GaussianEnvConfig,
    MarketplaceEnvConfig,
    ResponseFn,
    estimate_ate,
    gen_gaussian_sessions,
    gen_marketplace_sessions,
    ground_truth_ate,
    producer_response,
    producer_responses,
    run_comparison,
)
from .verify import (
    BiasVarianceCheck,
    OptimalityReport,
    alpha_sweep,
    brute_force_optimality,
    check_bias_variance,
    cost_exactness,
)

__all__ = [
    "MINUS_INF",
    "AteResult",
    "BiasVarianceCheck",
    "BoundReport",
    "CandidateGenerator",
    "CostLedger",
    "CountedModel",
    "DesignConfig",
    "DesignOutput",
    "GaussianEnvConfig",
    "ItemId",
    "MarketplaceEnvConfig",
    "MixingMode",
    "MixingSelection",
    "OptimalityReport",
    "PositionErrorProfile",
    "ProducerId",
    "ResponseFn",
    "Session",
    "TiePolicy",
    "TreatmentAllocation",
    "alpha_sweep",
    "analytic_cost",
    "assign",
    "bias_bound",
    "bound_report",
    "brute_force_optimality",
    "candgen_rank",
    "check_bias_variance",
    "cost_exactness",
    "derive_rng",
    "estimate_ate",
    "gen_gaussian_sessions",
    "gen_marketplace_sessions",
    "ground_truth_ate",
    "ideal_rank",
    "inaccuracy",
    "is_permutation",
    "oasis_rank",
    "position_errors",
    "producer_response",
    "producer_responses",
    "rank_by_scores",
    "run_comparison",
    "sample_alpha_producers",
    "sample_p0_star",
    "small_ramp_rank",
    "unicorn_multi_rank",
    "unicorn_rank",
    "validate_fractions",
    "variance_bound",
]
