"""Quality scorers, logistic calibration, and the multi-scale ranked model."""

from .calibration import CalibratedScorer, LogisticParams, apply_logistic, fit_logistic
from .multiscale import (
    QUALITY_LEVELS,
    MultiScaleQualityModel,
    PyramidConfig,
    RankedPair,
    build_pyramid,
    fidelity_loss,
    load_quality_ranker,
    mean_cosine_logits,
    pair_ranking_accuracy,
    pairwise_label,
    pairwise_win_prob,
    sample_crops,
    sample_ranking_pairs,
    save_quality_ranker,
    train_quality_ranker,
)
from .scorers import (
    CnnQualityScorer,
    GradientSharpness,
    NegativeTotalVariation,
    QualityScorer,
    get_scorer,
    load_cnn_scorer,
    save_cnn_scorer,
    train_cnn_scorer,
)

__all__ = [
    "QUALITY_LEVELS",
    "CalibratedScorer",
    "LogisticParams",
    "apply_logistic",
    "fit_logistic",
    "MultiScaleQualityModel",
    "PyramidConfig",
    "RankedPair",
    "build_pyramid",
    "fidelity_loss",
    "mean_cosine_logits",
    "pair_ranking_accuracy",
    "pairwise_label",
    "pairwise_win_prob",
    "sample_crops",
    "sample_ranking_pairs",
    "train_quality_ranker",
    "save_quality_ranker",
    "load_quality_ranker",
    "QualityScorer",
    "NegativeTotalVariation",
    "GradientSharpness",
    "CnnQualityScorer",
    "train_cnn_scorer",
    "save_cnn_scorer",
    "load_cnn_scorer",
    "get_scorer",
]
