"""Glue between feature tables, model fitting, prediction and scoring."""

from dataclasses import replace

import numpy as np
import pandas as pd

from .beta_glm import squeeze_boundary
from .metrics import ScoreRow, jll, nmse
from .models import (FarmPosterior, ModelSpec, Variant, coefficient_draws, param_layout,
                     predict_power)
from .nuts import SamplerConfig, nuts_sample, pilot_inv_metric
from .special import expit
from .splines import design_matrix

__all__ = ["design_for", "training_blocks", "fit", "fit_np", "turbine_draws",
           "predictive_draws", "score_turbines"]

FEATURES = ["freestream", "sin_yaw", "cos_yaw"]


def design_for(rows, spline):
    """Spline design matrix of the (freestream, sin_yaw, cos_yaw) columns."""
    return design_matrix(rows[FEATURES].to_numpy(dtype=float), spline).values


def _squeezed(rows):
    return squeeze_boundary(rows["target_power"].to_numpy(dtype=float))


def training_blocks(rows, spec: ModelSpec):
    """Per-turbine ``(y, X)`` blocks for the training turbines of ``spec``.

    Targets are squeezed into (0, 1) over the whole training table.
    """
    ids = spec.training_ids if spec.variant is not Variant.CP or spec.layout else None
    if ids:
        rows = rows[rows["turbine_id"].isin(set(ids))]
    rows = rows.sort_values(["turbine_id", "timestamp"], kind="mergesort")
    y = _squeezed(rows)
    X = design_for(rows, spec.spline)
    tid = rows["turbine_id"].to_numpy()
    order = ids if ids else sorted(set(tid))
    return {t: (y[tid == t], X[tid == t]) for t in order}


def fit(spec: ModelSpec, rows, config: SamplerConfig, pilot_init=True):
    """Sample the posterior of ``spec`` given training feature rows.

    With ``pilot_init`` the inverse metric starts from the curvature in the
    posterior bulk found by :func:`pilot_inv_metric` (dense or diagonal to
    match ``config.metric``) and chains start from draws of that Gaussian.
    The spline blocks and the duplicated metamodel intercept leave ridges
    that only the prior bounds, which a unit metric explores very slowly.
    """
    post = FarmPosterior(spec, training_blocks(rows, spec))
    inv = center = None
    if pilot_init:
        inv, center = pilot_inv_metric(post.logp_grad, post.dim, seed=config.seed,
                                       dense=config.metric == "dense")
    draws = nuts_sample(None, None, post.dim, config, logp_grad=post.logp_grad,
                        index_map=param_layout(spec), spec=spec, init_inv_metric=inv,
                        init_center=center)
    draws.extra["turbine_ids"] = list(post.turbine_ids)
    return draws


def fit_np(spec: ModelSpec, rows, config: SamplerConfig, turbine_ids=None):
    """Fit the no-pooling model one turbine at a time (its posterior factorises).

    Returns a dict ``turbine_id -> PosteriorDraws`` of single-turbine fits.
    """
    ids = spec.training_ids if turbine_ids is None else list(turbine_ids)
    out = {}
    for k, tid in enumerate(ids):
        sub = replace(spec, layout=spec.layout.with_training([tid]))
        cfg = replace(config, seed=int(np.random.SeedSequence([config.seed, k]).generate_state(1)[0]))
        out[tid] = fit(sub, rows, cfg)
    return out


def turbine_draws(fits, turbine_id, coords=None, rng=None):
    """``(eta, zeta)`` draws for a turbine from a fit or a dict of NP fits."""
    if isinstance(fits, dict):
        return coefficient_draws(fits[turbine_id], turbine_id)
    return coefficient_draws(fits, turbine_id, coords=coords, rng=rng)


def predictive_draws(eta, zeta, X):
    """Per-draw mean and precision at every row, each ``(S, N)``."""
    mu = expit(eta @ X.T)
    phi = np.exp(np.minimum(zeta @ X.T, 700.0))
    return mu, phi


def score_turbines(fits, test_rows, spline, layout, rng):
    """NMSE and JLL per turbine on held-out rows.

    Test targets are squeezed into (0, 1) over the whole test table.
    """
    test_rows = test_rows.sort_values(["turbine_id", "timestamp"], kind="mergesort")
    y_all = _squeezed(test_rows)
    X_all = design_for(test_rows, spline)
    tid = test_rows["turbine_id"].to_numpy()
    out = []
    for t in layout.ids:
        m = tid == t
        if not m.any():
            continue
        eta, zeta = turbine_draws(fits, t, rng=rng)
        mu, phi = predictive_draws(eta, zeta, X_all[m])
        out.append(ScoreRow(t, layout[t].is_training, nmse(y_all[m], mu.mean(axis=0)),
                            jll(y_all[m], mu, phi)))
    return out
