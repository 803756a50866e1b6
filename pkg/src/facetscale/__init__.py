"""Faceted Rasch measurement of rated text.

Calibrates comments, items, item steps and raters on one logit scale from
ordinal ratings, screens raters by fit, scores predicted rating
distributions against anchored items, and builds and serves judging plans.
"""

from .coral import (
    MultitaskConfig,
    MultitaskHead,
    MultitaskOrdinalNet,
    OrdinalHead,
    ordinal_backward,
    ordinal_cross_entropy,
    ordinal_forward,
    predict_distributions,
    train_multitask,
    unimodality_rate,
)
from .diagnostics import (
    FitReport,
    binary_item_comparison,
    category_monotonicity,
    fit_statistics,
    format_item_table,
    item_correlations,
    polychoric,
    wright_map_export,
)
from .estimation import (
    EstimationConfig,
    EstimationResult,
    FacetRasch,
    estimate,
    estimate_abilities_anchored,
    separation_reliability,
)
from .exceptions import (
    ConfigurationError,
    DisconnectedNetworkError,
    MissingDataError,
    PipelineError,
    PlanError,
    RejectedInputError,
    SplitError,
)
from .io import split_clustered, validate
from .model import (
    CommentSpec,
    FacetParameters,
    ItemSpec,
    RaterSpec,
    Response,
    category_probabilities,
    collapse_ratings,
    expected_score,
    simulate_responses,
)
from .plan import Batch, JudgingPlan, LinkageReport, PlanConfig, build_plan, linkage_analysis
from .raters import FilterPolicy, RaterQuality, apply_policy, compute_rater_quality, filter_and_refit
from .scoring import (
    AnchoredScorer,
    PlausibleValueConfig,
    RatingDistribution,
    raw_score_table,
    score_modal,
    score_plausible,
)
from .service import BatchService, BatchState, ServiceConfig

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
