"""Mean/precision beta regression: density, links, log-likelihood, gradient.

The beta law is parameterised by mean ``mu`` and precision ``phi`` with
shapes ``a = mu * phi`` and ``b = (1 - mu) * phi``. The mean follows a logit
link on ``X @ eta`` and the precision a log link on ``X @ zeta``.
"""

import math
from dataclasses import dataclass

import numba
import numpy as np

from .special import (DomainError, digamma_scalar, expit, expit_scalar,
                      lgamma_scalar)

__all__ = [
    "BetaParams",
    "beta_logpdf",
    "beta_mean_var",
    "link_mean",
    "link_precision",
    "loglik",
    "grad_loglik",
    "squeeze_boundary",
    "PrecisionOverflowError",
]

# exp overflows just above this
_MAX_LOG_PHI = 709.0


class PrecisionOverflowError(ArithmeticError):
    pass


@dataclass(frozen=True)
class BetaParams:
    mu: float
    phi: float

    def __post_init__(self):
        if not 0.0 < self.mu < 1.0:
            raise DomainError(f"mu must lie in (0, 1), got {self.mu}")
        if not self.phi > 0.0:
            raise DomainError(f"phi must be > 0, got {self.phi}")

    @property
    def a(self):
        return self.mu * self.phi

    @property
    def b(self):
        return (1.0 - self.mu) * self.phi


@numba.njit(cache=True)
def _logpdf_kernel(y, mu, phi, out):
    for i in range(y.shape[0]):
        a = mu[i] * phi[i]
        b = (1.0 - mu[i]) * phi[i]
        out[i] = (lgamma_scalar(phi[i]) - lgamma_scalar(a) - lgamma_scalar(b)
                  + (a - 1.0) * math.log(y[i]) + (b - 1.0) * math.log1p(-y[i]))


@numba.njit(cache=True)
def _row_terms(y, f1, f2, want_grad):
    """Log-density of one row and d/df1, d/df2; ll is -inf when undefined."""
    if f2 > _MAX_LOG_PHI:
        return -np.inf, 0.0, 0.0
    mu = expit_scalar(f1)
    omu = expit_scalar(-f1)
    phi = math.exp(f2)
    a = mu * phi
    b = omu * phi
    ly = math.log(y)
    l1y = math.log1p(-y)
    ll = (lgamma_scalar(phi) - lgamma_scalar(a) - lgamma_scalar(b)
          + (a - 1.0) * ly + (b - 1.0) * l1y)
    if not math.isfinite(ll):
        return -np.inf, 0.0, 0.0
    if not want_grad:
        return ll, 0.0, 0.0
    psa = digamma_scalar(a)
    psb = digamma_scalar(b)
    psp = digamma_scalar(phi)
    g1 = phi * mu * omu * ((ly - l1y) - psa + psb)
    g2 = phi * (psp + mu * (ly - psa) + omu * (l1y - psb))
    if not (math.isfinite(g1) and math.isfinite(g2)):
        return -np.inf, 0.0, 0.0
    return ll, g1, g2


@numba.njit(cache=True)
def _rows_kernel(y, f1, f2, want_grad, g1, g2):
    """Sum of row log-densities given the two linear predictors.

    Fills ``g1``/``g2`` with d loglik / d f1 and d loglik / d f2 per row when
    ``want_grad``. Returns -inf as soon as a row is not finite.
    """
    total = 0.0
    for i in range(y.shape[0]):
        ll, d1, d2 = _row_terms(y[i], f1[i], f2[i], want_grad)
        if ll == -np.inf:
            return -np.inf
        total += ll
        g1[i] = d1
        g2[i] = d2
    return total


@numba.njit(cache=True)
def _blocks_kernel(y, X, row_block, eta, zeta, want_grad, g_eta, g_zeta):
    """Log-likelihood with per-block coefficients ``eta[k]``, ``zeta[k]``.

    Row ``i`` uses block ``row_block[i]``; gradients w.r.t. the coefficient
    matrices are accumulated into ``g_eta`` and ``g_zeta`` (zeroed here).
    """
    n, w = X.shape
    g_eta[:, :] = 0.0
    g_zeta[:, :] = 0.0
    total = 0.0
    for i in range(n):
        k = row_block[i]
        f1 = 0.0
        f2 = 0.0
        for j in range(w):
            f1 += X[i, j] * eta[k, j]
            f2 += X[i, j] * zeta[k, j]
        ll, d1, d2 = _row_terms(y[i], f1, f2, want_grad)
        if ll == -np.inf:
            return -np.inf
        total += ll
        if want_grad:
            for j in range(w):
                g_eta[k, j] += X[i, j] * d1
                g_zeta[k, j] += X[i, j] * d2
    return total


def _check_y(y):
    y = np.ascontiguousarray(y, dtype=np.float64).ravel()
    bad = ~((y > 0.0) & (y < 1.0))
    if np.any(bad):
        idx = np.flatnonzero(bad)
        raise DomainError(
            f"y must lie strictly inside (0, 1); row {idx[0]} has {y[idx[0]]!r} "
            f"({idx.size} offending rows); squeeze boundary values first")
    return y


def beta_logpdf(y, mu, phi):
    """Log density of Beta(mu * phi, (1 - mu) * phi) at ``y`` (broadcasting)."""
    y, mu, phi = np.broadcast_arrays(np.asarray(y, float), np.asarray(mu, float),
                                     np.asarray(phi, float))
    shape = y.shape
    yv = _check_y(y)
    muv = np.ascontiguousarray(mu, dtype=np.float64).ravel()
    phv = np.ascontiguousarray(phi, dtype=np.float64).ravel()
    if np.any(~((muv > 0) & (muv < 1))):
        raise DomainError("mu must lie in (0, 1)")
    if np.any(~(phv > 0)) or not np.all(np.isfinite(phv)):
        raise DomainError("phi must be finite and > 0")
    out = np.empty_like(yv)
    _logpdf_kernel(yv, muv, phv, out)
    return float(out[0]) if len(shape) == 0 else out.reshape(shape)


def beta_mean_var(mu, phi):
    """Mean and variance ``mu * (1 - mu) / (1 + phi)``."""
    mu = np.asarray(mu, dtype=float)
    phi = np.asarray(phi, dtype=float)
    var = mu * (1.0 - mu) / (1.0 + phi)
    if mu.ndim == 0 and phi.ndim == 0:
        return float(mu), float(var)
    return mu, var


def _as_matrix(X):
    return np.asarray(getattr(X, "values", X), dtype=np.float64)


def _predictor(X, coef, name):
    Xv = _as_matrix(X)
    coef = np.asarray(coef, dtype=np.float64)
    if Xv.ndim != 2 or coef.ndim != 1 or Xv.shape[1] != coef.shape[0]:
        raise ValueError(
            f"dimension mismatch: X {Xv.shape} vs {name} {coef.shape}")
    return Xv @ coef


def link_mean(X, eta):
    """Row means ``expit(X @ eta)``."""
    return expit(_predictor(X, eta, "eta"))


def link_precision(X, zeta):
    """Row precisions ``exp(X @ zeta)``; raises on overflow."""
    f2 = _predictor(X, zeta, "zeta")
    over = f2 > _MAX_LOG_PHI
    if np.any(over):
        row = int(np.flatnonzero(over)[0])
        raise PrecisionOverflowError(
            f"exp(X @ zeta) overflows at row {row} (linear predictor {f2[row]:.4g})")
    return np.exp(f2)


def loglik_from_predictors(y, f1, f2, want_grad=True):
    """Log-likelihood and per-row gradients from the linear predictors.

    Returns ``(ll, g1, g2)``; ``ll`` is -inf (never raises) when any row is
    non-finite, which the sampler treats as a divergence.
    """
    n = y.shape[0]
    g1 = np.zeros(n)
    g2 = np.zeros(n)
    ll = _rows_kernel(y, np.ascontiguousarray(f1), np.ascontiguousarray(f2),
                      want_grad, g1, g2)
    return ll, g1, g2


def _checked_rows(y, X, eta, zeta):
    y = _check_y(y)
    Xv = _as_matrix(X)
    if Xv.shape[0] != y.shape[0]:
        raise ValueError(f"y has {y.shape[0]} rows, X has {Xv.shape[0]}")
    f1 = _predictor(Xv, eta, "eta")
    f2 = _predictor(Xv, zeta, "zeta")
    over = f2 > _MAX_LOG_PHI
    if np.any(over):
        row = int(np.flatnonzero(over)[0])
        raise PrecisionOverflowError(f"precision overflows at row {row}")
    return y, Xv, f1, f2


def loglik(y, X, eta, zeta):
    """Sum over rows of the beta log-density with linked mean and precision."""
    y, Xv, f1, f2 = _checked_rows(y, X, eta, zeta)
    ll, _, _ = loglik_from_predictors(y, f1, f2, want_grad=False)
    if not np.isfinite(ll):
        mu, phi = expit(f1), np.exp(f2)
        rows = beta_logpdf(y, mu, phi)
        row = int(np.flatnonzero(~np.isfinite(rows))[0])
        raise FloatingPointError(f"non-finite log-density at row {row}")
    return ll


def grad_loglik(y, X, eta, zeta):
    """Analytic gradient of :func:`loglik` w.r.t. ``eta`` and ``zeta``.

    Per row, with ``T = log y - log(1 - y)``::

        d/df1 = phi * mu * (1 - mu) * (T - psi(a) + psi(b))
        d/df2 = phi * (psi(phi) + mu * (log y - psi(a))
                       + (1 - mu) * (log(1 - y) - psi(b)))

    and both are pulled back through ``X.T``.
    """
    y, Xv, f1, f2 = _checked_rows(y, X, eta, zeta)
    ll, g1, g2 = loglik_from_predictors(y, f1, f2)
    if not np.isfinite(ll):
        raise FloatingPointError("non-finite log-likelihood")
    return Xv.T @ g1, Xv.T @ g2


def squeeze_boundary(y):
    """Map targets in [0, 1] into the open interval: ``(y (N - 1) + 0.5) / N``."""
    y = np.asarray(y, dtype=float)
    if np.any((y < 0) | (y > 1)):
        raise DomainError("targets must lie in [0, 1] before squeezing")
    n = y.size
    if n == 0:
        return y.copy()
    return (y * (n - 1) + 0.5) / n
