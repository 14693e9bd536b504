"""Bayesian beta-regression power curves for wind farms.

Spline-based beta regression of normalised turbine power on freestream wind
speed and direction, fitted with no pooling, complete pooling, partial
pooling or a spatial metamodel whose coefficients vary linearly with turbine
position, sampled by a native No-U-Turn sampler.
"""

from .beta_glm import beta_logpdf, grad_loglik, loglik, squeeze_boundary
from .diagnostics import ChainDiagnostics, ess_bulk, split_rhat
from .draws import PosteriorDraws
from .metrics import ScoreRow, aggregate_scores, jll, nmse, score_table
from .models import (FarmLayout, FarmPosterior, ModelError, ModelSpec, Turbine, Variant,
                     coefficient_draws, grad_log_posterior, log_posterior,
                     metamodel_predict_coeffs, param_count, param_layout, predict_power)
from .nuts import SamplerConfig, SamplerError, nuts_sample
from .scada import FilterReport, PipelineConfig, run_pipeline, train_test_split
from .splines import DEFAULT_SPLINE, FOUR_KNOT_SPLINE, SplineConfig, design_matrix
from .synthfarm import WakeConfig, WindProcess, generate_layout, inject_anomalies, simulate

__version__ = "0.1.0"

__all__ = [
    "ChainDiagnostics", "DEFAULT_SPLINE", "FOUR_KNOT_SPLINE", "FarmLayout", "FarmPosterior",
    "FilterReport", "ModelError", "ModelSpec", "PipelineConfig", "PosteriorDraws",
    "SamplerConfig", "SamplerError", "ScoreRow", "SplineConfig", "Turbine", "Variant",
    "WakeConfig", "WindProcess", "aggregate_scores", "beta_logpdf", "coefficient_draws",
    "design_matrix", "ess_bulk", "generate_layout", "grad_log_posterior", "grad_loglik",
    "inject_anomalies", "jll", "log_posterior", "loglik", "metamodel_predict_coeffs", "nmse",
    "nuts_sample", "param_count", "param_layout", "predict_power", "run_pipeline",
    "score_table", "simulate", "split_rhat", "squeeze_boundary", "train_test_split",
]
