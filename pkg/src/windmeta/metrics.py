"""Normalised mean squared error and joint log-likelihood scores."""

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .beta_glm import _check_y, _logpdf_kernel

__all__ = ["nmse", "jll", "ScoreRow", "score_table", "aggregate_scores"]


def nmse(y, y_hat):
    """Normalised MSE: 100 * sum (y - y_hat)^2 / (N var(y)).

    A perfect predictor scores 0 and predicting the mean of ``y`` scores
    exactly 100 (``var`` is the population variance).
    """
    y = np.asarray(y, dtype=float).ravel()
    y_hat = np.asarray(y_hat, dtype=float).ravel()
    if y.size == 0 or y.shape != y_hat.shape:
        raise ValueError(f"need equal non-empty lengths, got {y.shape} and {y_hat.shape}")
    var = np.mean((y - y.mean()) ** 2)
    if not var > 0:
        raise ValueError("nmse is undefined for constant y")
    # same reduction on both sides, so the mean predictor gives exactly 100
    return float(100.0 * (np.mean((y - y_hat) ** 2) / var))


def jll(y_test, mu_draws, phi_draws):
    """Joint log-likelihood of the test set averaged over posterior draws.

    Parameters
    ----------
    y_test : array_like, shape (N,)
        Targets strictly inside (0, 1).
    mu_draws, phi_draws : array_like, shape (S, N)
        Per-draw mean and precision at every test row.
    """
    y = _check_y(y_test)
    mu = np.atleast_2d(np.asarray(mu_draws, dtype=float))
    phi = np.atleast_2d(np.asarray(phi_draws, dtype=float))
    if mu.shape != phi.shape or mu.shape[1] != y.size:
        raise ValueError(f"shape mismatch: y {y.shape}, mu {mu.shape}, phi {phi.shape}")
    s, n = mu.shape
    yy = np.ascontiguousarray(np.broadcast_to(y, (s, n))).ravel()
    out = np.empty(s * n)
    _logpdf_kernel(yy, np.ascontiguousarray(mu).ravel(), np.ascontiguousarray(phi).ravel(), out)
    return float(out.reshape(s, n).sum(axis=1).mean())


@dataclass(frozen=True)
class ScoreRow:
    turbine_id: str
    observed: bool
    nmse: float
    jll: float

    def __post_init__(self):
        if not self.nmse >= 0:
            raise ValueError("nmse must be non-negative")


def score_table(rows, model=None):
    """Per-turbine score frame with columns ``turbine_id,observed,nmse,jll``."""
    df = pd.DataFrame([{"turbine_id": r.turbine_id, "observed": int(r.observed),
                        "nmse": r.nmse, "jll": r.jll} for r in rows],
                      columns=["turbine_id", "observed", "nmse", "jll"])
    if model is not None:
        df.insert(0, "model", model)
    return df


def aggregate_scores(df):
    """Mean nmse and jll per model (if present) and observed flag."""
    keys = [k for k in ("model", "observed") if k in df.columns]
    return df.groupby(keys, sort=True)[["nmse", "jll"]].mean().reset_index()
