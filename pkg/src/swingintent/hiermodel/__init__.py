"""Hierarchical skew-normal intention model."""
from .diagnostics import bulk_ess, diagnostics, split_rhat
from .model import IntentionData, Layout, PriorConfig, log_posterior
from .predict import (
    BatterApproach,
    ElpdComparison,
    ElpdResult,
    batter_approaches,
    compare,
    elpd_heldout,
    predict_intended,
    train_test_split,
)
from .sampler import FitWarning, PosteriorDraws, SamplerConfig, sample_posterior

__all__ = [
    "BatterApproach", "ElpdComparison", "ElpdResult", "FitWarning", "IntentionData", "Layout",
    "PosteriorDraws", "PriorConfig", "SamplerConfig", "batter_approaches", "bulk_ess", "compare",
    "diagnostics", "elpd_heldout", "log_posterior", "predict_intended", "sample_posterior",
    "split_rhat", "train_test_split",
]
