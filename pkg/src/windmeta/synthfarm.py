"""Synthetic wind farm with directional wake deficits.

Power is simulated from a known beta law so every model claim can be
checked against ground truth. Wind directions follow the meteorological
convention (the direction the wind blows *from*, 0 = north, 90 = east) and
layout coordinates have x pointing east and y pointing north.
"""

import math
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .models import FarmLayout, Turbine

__all__ = [
    "WakeConfig",
    "WindProcess",
    "generate_layout",
    "effective_wind",
    "effective_wind_matrix",
    "true_power_mu",
    "true_power_phi",
    "simulate",
    "inject_anomalies",
    "format_timestamps",
    "ANOMALY_KINDS",
]

START = pd.Timestamp("2020-01-01T00:00:00Z")
STEP = pd.Timedelta(minutes=10)
MU_EDGE = 0.02  # mean power fraction at cut-in (and 1 - MU_EDGE at rated speed)
MU_CLAMP = 1e-6


@dataclass(frozen=True)
class WakeConfig:
    rated_power: float = 2000.0
    cut_in: float = 3.5
    rated_speed: float = 12.5
    deficit_strength: float = 0.3
    deficit_halfwidth_deg: float = 30.0
    decay_length: float = 0.5
    noise_phi_base: float = 60.0
    # precision drops by a factor 1 + phi_transition * mu (1 - mu), lowest mid-curve
    phi_transition: float = 8.0

    def __post_init__(self):
        if not self.cut_in < self.rated_speed:
            raise ValueError("cut_in must be below rated_speed")
        if not 0.0 <= self.deficit_strength < 1.0:
            raise ValueError("deficit_strength must lie in [0, 1)")
        if not self.noise_phi_base > 0 or not self.rated_power > 0:
            raise ValueError("noise_phi_base and rated_power must be positive")
        if not self.deficit_halfwidth_deg > 0 or not self.decay_length > 0:
            raise ValueError("wake half-width and decay length must be positive")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class WindProcess:
    """Freestream wind process.

    Speed has a Weibull marginal driven by a Gaussian AR(1) latent series
    (so consecutive stamps are correlated). Direction is redrawn from a
    uniform law or a von Mises mixture with probability
    ``1 - direction_persistence`` and otherwise drifts slightly from the
    previous stamp.
    """

    weibull_shape: float = 2.0
    weibull_scale: float = 8.0
    speed_autocorr: float = 0.95
    max_speed: float = 25.0
    direction: str = "uniform"
    # chance a stamp keeps the previous direction (plus small noise)
    direction_persistence: float = 0.9
    direction_jitter_deg: float = 5.0
    vm_means_deg: tuple = (270.0,)
    vm_kappas: tuple = (2.0,)
    vm_weights: tuple = (1.0,)

    def to_dict(self):
        d = asdict(self)
        for k in ("vm_means_deg", "vm_kappas", "vm_weights"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("vm_means_deg", "vm_kappas", "vm_weights"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def generate_layout(rows, cols, jitter=0.0, seed=0):
    """Regular ``rows x cols`` grid on the unit square, ids in row-major order.

    Row 0 is the southern edge (y = 0) and column 0 the western edge
    (x = 0). ``jitter`` is the standard deviation of an optional Gaussian
    offset, clipped back into the square.
    """
    if rows * cols < 2:
        raise ValueError("need at least two turbines")
    rng = np.random.default_rng(seed)
    xs = np.linspace(0.0, 1.0, cols) if cols > 1 else np.full(1, 0.5)
    ys = np.linspace(0.0, 1.0, rows) if rows > 1 else np.full(1, 0.5)
    width = len(str(rows * cols - 1))
    turbines = []
    for r in range(rows):
        for c in range(cols):
            x, y = xs[c], ys[r]
            if jitter > 0:
                x, y = np.clip(np.array([x, y]) + rng.normal(0.0, jitter, 2), 0.0, 1.0)
            turbines.append(Turbine(f"T{r * cols + c:0{width}d}", float(x), float(y)))
    return FarmLayout(tuple(turbines))


def _deficit_factors(coords, direction_deg, cfg):
    """Matrix ``F[i, j]`` = multiplicative factor turbine j imposes on i."""
    theta = np.deg2rad(np.asarray(direction_deg, dtype=float))[..., None, None]
    # wind travels toward direction + 180 degrees
    tx, ty = -np.sin(theta), -np.cos(theta)
    vx = coords[:, None, 0] - coords[None, :, 0]  # from j to i
    vy = coords[:, None, 1] - coords[None, :, 1]
    dist = np.hypot(vx, vy)
    with np.errstate(invalid="ignore", divide="ignore"):
        cosang = np.clip((vx * tx + vy * ty) / dist, -1.0, 1.0)
    ang = np.arccos(cosang)
    half = np.deg2rad(cfg.deficit_halfwidth_deg)
    window = np.where(ang < half, np.cos(0.5 * np.pi * ang / half), 0.0)
    window = np.where(dist > 0, window, 0.0)
    return 1.0 - cfg.deficit_strength * np.exp(-dist / cfg.decay_length) * window


def effective_wind(u_free, direction_deg, target, layout: FarmLayout, cfg: WakeConfig):
    """Waked wind speed at one turbine (id or index) for a single condition."""
    if u_free < 0:
        raise ValueError("u_free must be >= 0")
    idx = layout.ids.index(target) if isinstance(target, str) else int(target)
    f = _deficit_factors(layout.coords(), direction_deg, cfg)
    return float(u_free * np.prod(f[idx]))


def effective_wind_matrix(u_free, direction_deg, layout: FarmLayout, cfg: WakeConfig):
    """Waked wind for every (timestamp, turbine); inputs are 1-d per timestamp."""
    u_free = np.asarray(u_free, dtype=float)
    f = _deficit_factors(layout.coords(), direction_deg, cfg)
    return u_free[:, None] * np.prod(f, axis=-1)


def _curve_slope(cfg):
    return 2.0 * math.log((1.0 - MU_EDGE) / MU_EDGE) / (cfg.rated_speed - cfg.cut_in)


def true_power_mu(u_eff, cfg: WakeConfig):
    """Logistic power curve: 0.02 at cut-in, 0.5 mid-way, 0.98 at rated speed."""
    u = np.asarray(u_eff, dtype=float)
    mid = 0.5 * (cfg.cut_in + cfg.rated_speed)
    mu = stats.logistic.cdf(_curve_slope(cfg) * (u - mid))
    mu = np.clip(mu, MU_CLAMP, 1.0 - MU_CLAMP)
    return float(mu) if mu.ndim == 0 else mu


def true_power_phi(mu, cfg: WakeConfig):
    mu = np.asarray(mu, dtype=float)
    return cfg.noise_phi_base / (1.0 + cfg.phi_transition * mu * (1.0 - mu))


def format_timestamps(ts):
    return pd.DatetimeIndex(ts).strftime("%Y-%m-%dT%H:%M:%SZ")


def _wind_series(n, proc: WindProcess, rng):
    rho = proc.speed_autocorr
    z = np.empty(n)
    z[0] = rng.standard_normal()
    eps = rng.standard_normal(n)
    s = math.sqrt(1.0 - rho * rho)
    for t in range(1, n):
        z[t] = rho * z[t - 1] + s * eps[t]
    u = stats.weibull_min.ppf(stats.norm.cdf(z), proc.weibull_shape, scale=proc.weibull_scale)
    u = np.minimum(u, proc.max_speed)
    if proc.direction == "uniform":
        d = rng.uniform(0.0, 360.0, n)
    elif proc.direction == "vonmises":
        w = np.asarray(proc.vm_weights, dtype=float)
        comp = rng.choice(len(w), size=n, p=w / w.sum())
        means = np.deg2rad(np.asarray(proc.vm_means_deg))[comp]
        kappas = np.asarray(proc.vm_kappas, dtype=float)[comp]
        d = np.rad2deg(rng.vonmises(means, kappas)) % 360.0
    else:
        raise ValueError(f"unknown direction process {proc.direction!r}")
    keep = rng.uniform(size=n) < proc.direction_persistence
    drift = rng.normal(0.0, proc.direction_jitter_deg, n)
    for t in range(1, n):
        if keep[t]:
            d[t] = (d[t - 1] + drift[t]) % 360.0
    return u, d


def _pitch_rpm(u_eff, y, cfg, rng):
    frac = np.clip((u_eff - cfg.cut_in) / (cfg.rated_speed - cfg.cut_in), 0.0, 1.0)
    rpm = 6.0 + 10.0 * frac + rng.normal(0.0, 0.3, u_eff.shape)
    pitch = 0.6 * np.maximum(u_eff - cfg.rated_speed, 0.0) + rng.normal(0.0, 0.3, u_eff.shape)
    return pitch, np.maximum(rpm, 0.0)


def simulate(layout: FarmLayout, cfg: WakeConfig = WakeConfig(), n_timestamps=1000,
             wind: WindProcess = WindProcess(), seed=0):
    """Simulate SCADA records and the matching ground-truth table.

    Returns
    -------
    records : DataFrame
        ``timestamp, turbine_id, power, wind_speed, yaw_deg, pitch_deg, rpm``
        sorted by (turbine_id, timestamp).
    truth : DataFrame
        ``timestamp, turbine_id, u_eff, mu`` plus the freestream speed,
        direction and precision used for each row.
    """
    if n_timestamps < 1:
        raise ValueError("n_timestamps must be >= 1")
    ss = np.random.SeedSequence(seed)
    rng_wind, rng_obs = [np.random.default_rng(s) for s in ss.spawn(2)]
    u_free, direction = _wind_series(n_timestamps, wind, rng_wind)
    u_eff = effective_wind_matrix(u_free, direction, layout, cfg)  # (n, T)
    mu = true_power_mu(u_eff, cfg)
    phi = true_power_phi(mu, cfg)
    y = rng_obs.beta(mu * phi, (1.0 - mu) * phi)
    pitch, rpm = _pitch_rpm(u_eff, y, cfg, rng_obs)
    # anemometers read the local waked speed; nacelles track the wind
    speed_noise = rng_obs.normal(0.0, 0.2, u_eff.shape)
    yaw_noise = rng_obs.normal(0.0, 3.0, u_eff.shape)

    n_t = len(layout)
    stamps = pd.date_range(START, periods=n_timestamps, freq=STEP)
    ids = np.array(layout.ids)
    df = pd.DataFrame({
        "timestamp": stamps.repeat(n_t),
        "turbine_id": np.tile(ids, n_timestamps),
        "power": (y * cfg.rated_power).ravel(),
        "wind_speed": np.maximum(u_eff + speed_noise, 0.0).ravel(),
        "yaw_deg": ((direction[:, None] + yaw_noise) % 360.0).ravel(),
        "pitch_deg": pitch.ravel(),
        "rpm": rpm.ravel(),
    })
    truth = pd.DataFrame({
        "timestamp": df["timestamp"],
        "turbine_id": df["turbine_id"],
        "u_eff": u_eff.ravel(),
        "mu": mu.ravel(),
        "phi": phi.ravel(),
        "u_free": np.repeat(u_free, n_t),
        "direction_deg": np.repeat(direction, n_t),
    })
    order = np.lexsort((df["timestamp"].values, df["turbine_id"].values))
    return (df.iloc[order].reset_index(drop=True), truth.iloc[order].reset_index(drop=True))


ANOMALY_KINDS = ("curtailment", "shutdown", "boost", "stationary", "outlier")


def inject_anomalies(records, cfg: WakeConfig = WakeConfig(), segments_per_kind=3,
                     segment_length=12, seed=0, kinds=ANOMALY_KINDS):
    """Overwrite short segments of clean records with labelled anomalies.

    * curtailment -- flat power at half rated with 20 degree pitch
    * shutdown    -- zero power, feathered blades, stopped rotor in good wind
    * boost       -- power 5-10 % above rated
    * stationary  -- frozen anemometer reading
    * outlier     -- isolated rows with power far below rated in strong wind

    Returns ``(records, labels)``; records come back sorted by (turbine_id,
    timestamp) with a fresh index and ``labels`` is an aligned Series holding
    the anomaly kind or an empty string.
    """
    rng = np.random.default_rng(seed)
    df = records.sort_values(["turbine_id", "timestamp"], kind="mergesort").reset_index(drop=True)
    labels = pd.Series("", index=df.index, dtype=object)
    rated = cfg.rated_power
    by_turbine = {k: v.index.to_numpy() for k, v in df.groupby("turbine_id", sort=True)}
    turbine_ids = sorted(by_turbine)
    used = np.zeros(len(df), dtype=bool)

    def pick_segment(length, cond=None):
        # candidate starts: every row in the window satisfies cond and the
        # window plus a one-row margin is untouched
        ok = np.ones(len(df), dtype=bool) if cond is None else np.asarray(cond(df), dtype=bool)
        ok &= ~used
        cands = []
        for tid in turbine_ids:
            idx = by_turbine[tid]
            good = ok[idx].astype(int)
            free = (~used[idx]).astype(int)
            win = np.convolve(good, np.ones(length, dtype=int), "valid") == length
            margin = np.convolve(free, np.ones(length + 2, dtype=int), "valid") == length + 2
            starts = np.flatnonzero(win[1:len(margin) + 1] & margin) + 1
            cands.extend(idx[s] for s in starts)
        if not cands:
            raise RuntimeError("no room left to place an anomaly segment")
        first = cands[int(rng.integers(len(cands)))]
        seg = np.arange(first, first + length)
        used[seg] = True
        return seg

    for kind in kinds:
        for _ in range(segments_per_kind):
            if kind == "curtailment":
                seg = pick_segment(segment_length, lambda d: d["power"] > 0.6 * rated)
                df.loc[seg, "power"] = 0.5 * rated
                df.loc[seg, "pitch_deg"] = 20.0
            elif kind == "shutdown":
                seg = pick_segment(segment_length, lambda d: d["wind_speed"] > cfg.cut_in + 3)
                df.loc[seg, "power"] = 0.0
                df.loc[seg, "pitch_deg"] = 90.0
                df.loc[seg, "rpm"] = 0.0
            elif kind == "boost":
                seg = pick_segment(segment_length, lambda d: d["power"] > 0.9 * rated)
                df.loc[seg, "power"] = rated * rng.uniform(1.05, 1.10, len(seg))
            elif kind == "stationary":
                seg = pick_segment(segment_length)
                df.loc[seg, "wind_speed"] = float(df.loc[seg[0], "wind_speed"])
            elif kind == "outlier":
                seg = pick_segment(1, lambda d: d["wind_speed"] > cfg.rated_speed + 3.0)
                df.loc[seg, "power"] = rated * rng.uniform(0.1, 0.3, len(seg))
            else:
                raise ValueError(f"unknown anomaly kind {kind!r}")
            labels.loc[seg] = kind
    return df, labels
