"""Explain survival black boxes with local Cox proportional hazards surrogates."""

from .core import (
    Dataset,
    Sample,
    StepFunction,
    TimeGrid,
    build_time_grid,
    chf_to_survival,
    concordance_index,
    integrate_step,
    nelson_aalen,
)
from .cox import CoxModel, fit_cox, partial_log_likelihood
from .explainer import ExplainConfig, Explanation, explain, sample_ball
from .forest import ForestConfig, SurvivalForest, fit_forest
from .synth import ClusterSpec, default_specs, generate_dataset

__all__ = [
    "ClusterSpec",
    "CoxModel",
    "Dataset",
    "ExplainConfig",
    "Explanation",
    "ForestConfig",
    "Sample",
    "StepFunction",
    "SurvivalForest",
    "TimeGrid",
    "build_time_grid",
    "chf_to_survival",
    "concordance_index",
    "default_specs",
    "explain",
    "fit_cox",
    "fit_forest",
    "generate_dataset",
    "integrate_step",
    "nelson_aalen",
    "partial_log_likelihood",
    "sample_ball",
]
