"""Rank-normalised split R-hat and bulk effective sample size.

Both follow the rank-normalisation recipe of Vehtari et al. (2021): draws
are pooled, ranked, mapped through the normal quantile function and each
chain is split in half before the classical statistics are computed.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

__all__ = ["split_rhat", "ess_bulk", "ChainDiagnostics", "autocovariance"]


def _as_chains(draws):
    x = np.asarray(draws, dtype=float)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3:
        raise ValueError("draws must be (chains, samples) or (chains, samples, params)")
    return x


def _split(x):
    # (chains, n) -> (2 chains, n // 2), dropping the middle draw when n is odd
    n = x.shape[1]
    half = n // 2
    return np.concatenate((x[:, :half], x[:, n - half:]), axis=0)


def _z_scale(x):
    ranks = stats.rankdata(x, method="average").reshape(x.shape)
    return stats.norm.ppf((ranks - 0.375) / (x.size + 0.25))


def _rhat(x):
    n = x.shape[1]
    between = n * np.var(x.mean(axis=1), ddof=1)
    within = np.mean(np.var(x, axis=1, ddof=1))
    return float(np.sqrt((between / within + n - 1) / n))


def autocovariance(x):
    """Biased autocovariance of a 1-d series via FFT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    m = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x - x.mean(), n=m)
    acov = np.fft.irfft(f * np.conj(f), n=m)[:n]
    return acov / n


def _ess(x):
    chains, n = x.shape
    acov = np.array([autocovariance(c) for c in x])
    chain_mean = x.mean(axis=1)
    mean_var = np.mean(acov[:, 0]) * n / (n - 1.0)
    var_plus = mean_var * (n - 1.0) / n
    if chains > 1:
        var_plus += np.var(chain_mean, ddof=1)

    rho = np.zeros(n)
    rho[0] = 1.0
    even = 1.0
    odd = 1.0 - (mean_var - np.mean(acov[:, 1])) / var_plus
    rho[1] = odd
    # Geyer initial positive sequence
    t = 1
    while t < n - 3 and even + odd > 0.0:
        even = 1.0 - (mean_var - np.mean(acov[:, t + 1])) / var_plus
        odd = 1.0 - (mean_var - np.mean(acov[:, t + 2])) / var_plus
        if even + odd >= 0.0:
            rho[t + 1] = even
            rho[t + 2] = odd
        t += 2
    max_t = t - 2
    if rho[max_t + 1] > 0.0:
        max_t += 1
    # initial monotone sequence
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = 0.5 * (rho[t - 1] + rho[t])
            rho[t + 2] = rho[t + 1]
        t += 2
    total = chains * n
    tau = -1.0 + 2.0 * np.sum(rho[:max_t + 1]) + np.sum(rho[max_t + 1:max_t + 2])
    tau = max(tau, 1.0 / np.log10(total))
    return float(total / tau)


def _per_param(draws, fn, min_chains):
    x = _as_chains(draws)
    chains, n, p = x.shape
    if chains < min_chains:
        raise ValueError(f"need at least {min_chains} chains, got {chains}")
    if n < 4:
        raise ValueError(f"need at least 4 draws per chain, got {n}")
    out = np.full(p, np.nan)
    for j in range(p):
        xj = x[:, :, j]
        if not np.all(np.isfinite(xj)) or np.ptp(xj) == 0.0:
            continue  # not computable
        out[j] = fn(xj)
    return out


def _rhat_rank(xj):
    bulk = _rhat(_z_scale(_split(xj)))
    folded = np.abs(xj - np.median(xj))
    tail = _rhat(_z_scale(_split(folded))) if np.ptp(folded) > 0 else bulk
    return max(bulk, tail)


def split_rhat(draws):
    """Rank-normalised split R-hat per parameter.

    Parameters
    ----------
    draws : array_like, shape (chains, samples[, params])

    Returns
    -------
    ndarray
        Maximum of the bulk and folded (tail) statistics. Parameters that
        are constant across all draws are not computable and get NaN.
    """
    return _per_param(draws, _rhat_rank, min_chains=2)


def ess_bulk(draws):
    """Rank-normalised bulk effective sample size per parameter (NaN if constant)."""
    return _per_param(draws, lambda xj: _ess(_z_scale(_split(xj))), min_chains=1)


def _nanmax(a):
    a = np.asarray(a, dtype=float)
    return float(np.nanmax(a)) if np.any(np.isfinite(a)) else float("nan")


def _nanmin(a):
    a = np.asarray(a, dtype=float)
    return float(np.nanmin(a)) if np.any(np.isfinite(a)) else float("nan")


@dataclass
class ChainDiagnostics:
    rhat: np.ndarray
    ess_bulk: np.ndarray
    divergences: int
    treedepth_hits: int
    names: Optional[list] = None
    step_sizes: Optional[np.ndarray] = None
    mean_accept: Optional[np.ndarray] = None

    @classmethod
    def from_draws(cls, draws, divergences=0, treedepth_hits=0, names=None, **kw):
        x = _as_chains(draws)
        rhat = split_rhat(x) if x.shape[0] >= 2 else np.full(x.shape[2], np.nan)
        return cls(rhat=rhat, ess_bulk=ess_bulk(x), divergences=int(divergences),
                   treedepth_hits=int(treedepth_hits), names=names, **kw)

    @property
    def max_rhat(self):
        return _nanmax(self.rhat)

    @property
    def min_ess(self):
        return _nanmin(self.ess_bulk)

    def converged(self, rhat_max=1.01, ess_min=400.0):
        return bool(self.max_rhat <= rhat_max and self.min_ess >= ess_min)

    def summary(self):
        out = {
            "max_rhat": self.max_rhat,
            "min_ess_bulk": self.min_ess,
            "divergences": int(self.divergences),
            "treedepth_hits": int(self.treedepth_hits),
        }
        if self.step_sizes is not None:
            out["step_sizes"] = [float(s) for s in self.step_sizes]
        return out

    def summary_line(self):
        return (f"max_rhat={self.max_rhat:.4f} min_ess_bulk={self.min_ess:.1f} "
                f"divergences={self.divergences}")

    def to_frame(self):
        names = self.names or [f"theta[{i}]" for i in range(len(self.rhat))]
        return pd.DataFrame({"parameter": names, "rhat": self.rhat, "ess_bulk": self.ess_bulk})

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False)
