"""Covariate-aware multiple hypothesis testing with learned p-value thresholds."""

from .core import (
    CallableRule,
    ConfigurationError,
    ConstantRule,
    Dataset,
    DecisionRule,
    DiscoveryReport,
    FeatureStats,
    FoldPlan,
    GroupedRule,
    HypothesisRecord,
    ScaledRule,
    StandardizingRule,
    ValidationError,
    apply_rule,
    make_folds,
    rule_from_config,
    standardize,
)
from .baselines import GroupAssignment, bh_threshold, group_bh, kmeans, storey_bh, storey_pi0
from .estimator import expected_fd, mirror_fd, mirror_fdp
from .mlp import AdagradState, MlpParams, MlpRule, adagrad_step, fit_regression
from .oracle import GroupDensity, MixtureGroup, closed_form_optimal, group_optimal_thresholds
from .simgen import GenSpec, generate, generate_weak_dep
from .trainer import TrainConfig, TrainResult, neural_fdr, rescale_gamma

__version__ = "0.1.0"

__all__ = [
    "AdagradState",
    "CallableRule",
    "ConfigurationError",
    "ConstantRule",
    "Dataset",
    "DecisionRule",
    "DiscoveryReport",
    "FeatureStats",
    "FoldPlan",
    "GenSpec",
    "GroupAssignment",
    "GroupDensity",
    "GroupedRule",
    "HypothesisRecord",
    "MixtureGroup",
    "MlpParams",
    "MlpRule",
    "ScaledRule",
    "StandardizingRule",
    "TrainConfig",
    "TrainResult",
    "ValidationError",
    "adagrad_step",
    "apply_rule",
    "bh_threshold",
    "closed_form_optimal",
    "expected_fd",
    "fit_regression",
    "generate",
    "generate_weak_dep",
    "group_bh",
    "group_optimal_thresholds",
    "kmeans",
    "make_folds",
    "mirror_fd",
    "mirror_fdp",
    "neural_fdr",
    "rescale_gamma",
    "rule_from_config",
    "standardize",
    "storey_bh",
    "storey_pi0",
]
