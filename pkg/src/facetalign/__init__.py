"""facetalign: multi-facet calibration of judge ratings and
tolerance-constrained preference optimization on tabular policies."""

from .align import (
    DualState,
    ReferencePolicy,
    TabularPolicy,
    TrainConfig,
    TrainTrace,
    dpo_pair_loss,
    dual_update,
    lagrangian_objective,
    log_prob,
    pcgrad_combine,
    per_dim_gradient,
    per_dim_gradients,
    per_dim_loss,
    standard_multineg_loss,
    train,
)
from .data import (
    DIMENSIONS,
    InstanceParseResult,
    ParseError,
    PersonaInstance,
    RatingCorpus,
    RatingObservation,
    SyntheticSpec,
    extend_with_judge,
    gen_synthetic_preferences,
    gen_synthetic_ratings,
    merge_corpora,
    parse_instances,
    parse_ratings,
    validate_instance,
)
from .params import FacetParams, project_zero_mean
from .rasch import (
    FitConfig,
    FitResult,
    fisher_se,
    fit,
    fit_all_dimensions,
    grad_nll,
    log_odds,
    nll,
    predict_prob,
)
from .scoring import (
    ModelScorecard,
    StatReport,
    friedman_test,
    judge_perturbation_bound,
    mfrm_scorecard,
    rank_stability,
    rating_scorecard,
    raw_prob,
    z_score,
)
from .theory import (
    ConflictPair,
    conflict_coefficient,
    lag_grad_norm_sq,
    make_conflict_pair,
    smoothness_progress_check,
    speedup_indicator,
    uniform_grad_norm_sq,
    verify_grid,
)

__version__ = "0.1.0"
