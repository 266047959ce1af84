"""metacal: learn a weighted combination of evaluation metrics that aligns
with human preference judgments, and verify the alignment."""

from .core import (
    ArityMismatch,
    CalibratedModel,
    ExampleId,
    MetacalError,
    MetricSpec,
    MissingTarget,
    ModelKind,
    PreferencePair,
    PreferenceTarget,
    ScoreMatrix,
    TargetKind,
    Weighting,
    validate_alignment,
)
from .gbt import (
    GbtConfig,
    GbtLoss,
    PruneTrace,
    RankingPairs,
    TreeEnsemble,
    calibrate_gbt,
    cross_validate,
    feature_importance,
    gbt_train,
    iterative_prune,
    search_n_estimators,
)
from .gp import (
    GpConfig,
    GpSurrogate,
    LengthscalePolicy,
    calibrate_gp,
    expand_features,
    gp_fit,
    gp_predict,
    matern52,
    select_top_k,
    suggest_next,
)
from .harness import (
    EvalReport,
    GroupedScores,
    acc_t,
    avg_corr,
    build_report,
    grouped_pairwise_accuracy,
    seg_pearson,
    sys_pearson,
)
from .io import (
    load_model,
    load_scores,
    load_specs,
    report_model,
    save_model,
    score_with_model,
    split_train_test,
)
from .objectives import (
    DegenerateInput,
    EmptyInput,
    LengthMismatch,
    ObjectiveKind,
    kendall_tau,
    pairwise_accuracy,
    pearson_r,
    spearman_rho,
)
from .preprocess import PreprocessConfig, normalize_matrix, normalize_score
from .textmetrics import SegmentPair, bleu, chrf, rouge_1, rouge_2, rouge_l, score_corpus

__version__ = "0.1.0"

__all__ = [
    "ArityMismatch",
    "CalibratedModel",
    "DegenerateInput",
    "EmptyInput",
    "EvalReport",
    "ExampleId",
    "GbtConfig",
    "GbtLoss",
    "GpConfig",
    "GpSurrogate",
    "GroupedScores",
    "LengthMismatch",
    "LengthscalePolicy",
    "MetacalError",
    "MetricSpec",
    "MissingTarget",
    "ModelKind",
    "ObjectiveKind",
    "PreferencePair",
    "PreferenceTarget",
    "PreprocessConfig",
    "PruneTrace",
    "RankingPairs",
    "ScoreMatrix",
    "SegmentPair",
    "TargetKind",
    "TreeEnsemble",
    "Weighting",
    "acc_t",
    "avg_corr",
    "bleu",
    "build_report",
    "calibrate_gbt",
    "calibrate_gp",
    "chrf",
    "cross_validate",
    "expand_features",
    "feature_importance",
    "gbt_train",
    "gp_fit",
    "gp_predict",
    "grouped_pairwise_accuracy",
    "iterative_prune",
    "kendall_tau",
    "load_model",
    "load_scores",
    "load_specs",
    "matern52",
    "normalize_matrix",
    "normalize_score",
    "pairwise_accuracy",
    "pearson_r",
    "report_model",
    "rouge_1",
    "rouge_2",
    "rouge_l",
    "save_model",
    "score_corpus",
    "score_with_model",
    "search_n_estimators",
    "seg_pearson",
    "select_top_k",
    "spearman_rho",
    "split_train_test",
    "suggest_next",
    "sys_pearson",
    "validate_alignment",
]
