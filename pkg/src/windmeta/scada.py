"""SCADA cleaning, feature construction and stratified subsampling.

The pipeline order is fixed: boost capping, then five filters (pitch/RPM
bands, RPM rate, stationary runs, Mahalanobis distance, freestream band),
then feature construction and stratified sampling. Every removed row is
attributed to exactly one step in a :class:`FilterReport`.
"""

import json
import warnings
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

__all__ = [
    "PipelineConfig",
    "FilterReport",
    "ScalingMeta",
    "FEATURE_COLUMNS",
    "RECORD_COLUMNS",
    "read_records",
    "write_records",
    "cap_power_boost",
    "filter_thresholds",
    "filter_rpm_rate",
    "filter_stationary",
    "mahalanobis_sq",
    "msd_filter",
    "compute_freestream",
    "band_filter",
    "band_statistics",
    "circular_median_deg",
    "build_features",
    "stratified_sample",
    "train_test_split",
    "clean",
    "run_pipeline",
    "PipelineError",
]

RECORD_COLUMNS = ["timestamp", "turbine_id", "power", "wind_speed", "yaw_deg", "pitch_deg", "rpm"]
FEATURE_COLUMNS = ["timestamp", "turbine_id", "freestream", "sin_yaw", "cos_yaw", "target_power"]
STEPS = ("thresholds", "rpm_rate", "stationary", "msd", "band", "features")
TEN_MIN = pd.Timedelta(minutes=10)


class PipelineError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    rated_power: float = 2000.0
    # (power fraction upper edge, max pitch in degrees)
    pitch_bands: tuple = ((0.05, 30.0), (0.8, 6.0), (1.0, 90.0))
    # (power fraction upper edge, min rpm, max rpm)
    rpm_bands: tuple = ((0.05, 0.0, 13.0), (1.0, 4.0, 25.0))
    max_delta_rpm: float = 5.0
    stationary_window: int = 6
    stationary_tolerance: float = 1e-6
    chi2_quantile: float = 0.99
    n_bins: int = 50
    band_sigma: float = 3.0
    yaw_bins: int = 12
    power_bins: int = 10

    def to_dict(self):
        d = asdict(self)
        d["pitch_bands"] = [list(b) for b in self.pitch_bands]
        d["rpm_bands"] = [list(b) for b in self.rpm_bands]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("pitch_bands", "rpm_bands"):
            if k in d:
                d[k] = tuple(tuple(float(v) for v in b) for b in d[k])
        return cls(**d)


@dataclass
class FilterReport:
    raw_rows: int = 0
    removed: dict = field(default_factory=lambda: {s: 0 for s in STEPS})
    modified: dict = field(default_factory=lambda: {"cap_power_boost": 0})
    retained: int = 0
    warnings: list = field(default_factory=list)

    @property
    def retention(self):
        return self.retained / self.raw_rows if self.raw_rows else float("nan")

    def reconciles(self):
        return sum(self.removed.values()) == self.raw_rows - self.retained

    def dominant_step(self):
        return max(self.removed, key=lambda k: self.removed[k])

    def to_dict(self):
        return {"raw_rows": self.raw_rows, "removed": dict(self.removed),
                "modified": dict(self.modified), "retained": self.retained,
                "retention": self.retention, "warnings": list(self.warnings)}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


# -- IO ----------------------------------------------------------------------


def read_records(path):
    df = pd.read_csv(path, dtype={"turbine_id": str})
    missing = set(RECORD_COLUMNS) - set(df.columns)
    if missing:
        raise PipelineError(f"{path}: missing columns {sorted(missing)}")
    df["timestamp"] = pd.to_datetime(df["timestamp"], utc=True)
    return df[RECORD_COLUMNS]


def write_records(df, path, columns=RECORD_COLUMNS):
    out = df[list(columns)].copy()
    if "timestamp" in out:
        out["timestamp"] = pd.DatetimeIndex(out["timestamp"]).strftime("%Y-%m-%dT%H:%M:%SZ")
    out.to_csv(path, index=False, float_format="%.10g")


def _sorted(records):
    return records.sort_values(["turbine_id", "timestamp"], kind="mergesort")


def _consecutive(records):
    """True where the previous row is the same turbine exactly 10 minutes earlier."""
    same = records["turbine_id"].eq(records["turbine_id"].shift())
    step = records["timestamp"].diff().eq(TEN_MIN)
    return (same & step).to_numpy()


# -- boost capping and filters -------------------------------------------------


def cap_power_boost(records, rated_power, report: Optional[FilterReport] = None):
    """Clip power to ``rated_power``; no rows are removed."""
    if not rated_power > 0:
        raise PipelineError("rated_power must be positive")
    out = records.copy()
    over = out["power"] > rated_power
    out.loc[over, "power"] = rated_power
    if report is not None:
        report.modified["cap_power_boost"] += int(over.sum())
    return out


def _band_index(frac, uppers):
    uppers = np.asarray(uppers, dtype=float)
    if np.any(np.diff(uppers) <= 0):
        raise PipelineError(f"band table not strictly increasing: {uppers.tolist()}")
    if uppers[-1] < 1.0:
        raise PipelineError("band table must cover power fractions up to 1")
    return np.minimum(np.searchsorted(uppers, frac, side="left"), len(uppers) - 1)


def filter_thresholds(records, pitch_max_by_power_band, rpm_by_power_band, rated_power):
    """Remove rows that break the per-power-band pitch and RPM limits.

    ``pitch_max_by_power_band`` holds ``(power_frac_upper, pitch_max)`` and
    ``rpm_by_power_band`` holds ``(power_frac_upper, rpm_min, rpm_max)``.
    A row belongs to the first band whose upper edge is at or above its
    power fraction. High pitch below rated power flags curtailment or
    shutdown; high RPM at near-zero power flags operation above cut-out.
    """
    frac = (records["power"] / rated_power).to_numpy()
    pb = np.asarray(pitch_max_by_power_band, dtype=float)
    rb = np.asarray(rpm_by_power_band, dtype=float)
    ip = _band_index(frac, pb[:, 0])
    ir = _band_index(frac, rb[:, 0])
    pitch = records["pitch_deg"].to_numpy()
    rpm = records["rpm"].to_numpy()
    bad = (pitch > pb[ip, 1]) | (rpm < rb[ir, 1]) | (rpm > rb[ir, 2])
    return records[~bad]


def filter_rpm_rate(records, max_delta_rpm):
    """Remove rows whose RPM jumps more than ``max_delta_rpm`` from the previous stamp."""
    records = _sorted(records)
    cons = _consecutive(records)
    delta = records["rpm"].diff().abs().to_numpy()
    bad = cons & (delta > max_delta_rpm)
    return records[~bad]


def _run_mask(values, cons, window, tolerance, ignore=None):
    # label runs of adjacent rows whose value stays within tolerance
    n = len(values)
    if n == 0:
        return np.zeros(0, dtype=bool)
    flat = np.zeros(n, dtype=bool)
    flat[1:] = cons[1:] & (np.abs(np.diff(values)) <= tolerance)
    run_id = np.cumsum(~flat)
    sizes = np.bincount(run_id)[run_id]
    mask = sizes >= window
    if ignore is not None:
        mask &= ~ignore
    return mask


def filter_stationary(records, window, tolerance, ignore_power=None):
    """Remove runs of at least ``window`` rows with constant wind speed or power.

    Runs follow each turbine's remaining rows in time order, so a frozen
    sensor is still caught when an earlier step punched a hole in it.
    ``ignore_power`` (e.g. the rated cap) exempts power runs sitting at that
    value, which are legitimate after boost capping.
    """
    if window < 2:
        raise PipelineError("window must be >= 2")
    records = _sorted(records)
    same = records["turbine_id"].eq(records["turbine_id"].shift()).to_numpy()
    ws = records["wind_speed"].to_numpy()
    pw = records["power"].to_numpy()
    ignore = None if ignore_power is None else np.isclose(pw, ignore_power, rtol=0, atol=tolerance)
    bad = _run_mask(ws, same, window, tolerance) | _run_mask(pw, same, window, tolerance, ignore)
    return records[~bad]


def mahalanobis_sq(points, mean, cov):
    """Squared Mahalanobis distance of each row of ``points``."""
    d = np.asarray(points, dtype=float) - mean
    sol = np.linalg.solve(cov, d.T).T
    return np.einsum("ij,ij->i", d, sol)


def msd_filter(records, chi2_quantile=0.99, report: Optional[FilterReport] = None):
    """Per turbine, drop (pitch, power) points beyond the chi-square(2) quantile."""
    threshold = stats.chi2.ppf(chi2_quantile, df=2)
    keep = np.ones(len(records), dtype=bool)
    pos = 0
    records = _sorted(records)
    for tid, grp in records.groupby("turbine_id", sort=True):
        n = len(grp)
        pts = grp[["pitch_deg", "power"]].to_numpy()
        if n < 3:
            if report is not None:
                report.warnings.append(f"msd: turbine {tid} has {n} rows, step skipped")
        else:
            cov = np.cov(pts, rowvar=False)
            if np.linalg.cond(cov) > 1e12:
                if report is not None:
                    report.warnings.append(f"msd: singular covariance for turbine {tid}, step skipped")
            else:
                keep[pos:pos + n] = mahalanobis_sq(pts, pts.mean(axis=0), cov) <= threshold
        pos += n
    return records[keep]


def compute_freestream(records, training_ids):
    """Per timestamp, the maximum wind speed over training turbines."""
    tr = records[records["turbine_id"].isin(set(training_ids))]
    return tr.groupby("timestamp")["wind_speed"].max()


@dataclass(frozen=True)
class BandStats:
    edges: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    count: np.ndarray


def band_statistics(freestream_per_row, power, n_bins):
    fs = np.asarray(freestream_per_row, dtype=float)
    pw = np.asarray(power, dtype=float)
    ok = np.isfinite(fs)
    lo, hi = (fs[ok].min(), fs[ok].max()) if ok.any() else (0.0, 1.0)
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, n_bins + 1)
    b = np.clip(np.searchsorted(edges, fs[ok], side="right") - 1, 0, n_bins - 1)
    count = np.bincount(b, minlength=n_bins)
    s = np.bincount(b, weights=pw[ok], minlength=n_bins)
    mean = np.divide(s, count, out=np.zeros(n_bins), where=count > 0)
    ss = np.bincount(b, weights=(pw[ok] - mean[b]) ** 2, minlength=n_bins)
    std = np.sqrt(np.divide(ss, count, out=np.zeros(n_bins), where=count > 0))
    return BandStats(edges, mean, std, count)


def band_filter(records, freestream, n_bins=50, n_sigma=3.0, stats_=None):
    """Keep rows whose power lies within ``n_sigma`` of their freestream-bin mean.

    ``freestream`` maps timestamp to freestream speed. Rows without a
    freestream value and bins with fewer than three rows pass unfiltered.
    Passing ``stats_`` (from :func:`band_statistics`) freezes the bins.

    Returns ``(records, stats)``.
    """
    records = _sorted(records)
    fs = records["timestamp"].map(freestream).to_numpy(dtype=float)
    pw = records["power"].to_numpy()
    st = stats_ if stats_ is not None else band_statistics(fs, pw, n_bins)
    ok = np.isfinite(fs)
    b = np.clip(np.searchsorted(st.edges, fs[ok], side="right") - 1, 0, len(st.mean) - 1)
    dev = np.abs(pw[ok] - st.mean[b])
    bad_ok = (st.count[b] >= 3) & (dev > n_sigma * st.std[b])
    bad = np.zeros(len(records), dtype=bool)
    bad[ok] = bad_ok
    return records[~bad], st


# -- features ------------------------------------------------------------------


def circular_median_deg(angles_deg):
    """Median direction as atan2(median sin, median cos), in [0, 360)."""
    a = np.deg2rad(np.asarray(angles_deg, dtype=float))
    return float(np.rad2deg(np.arctan2(np.median(np.sin(a)), np.median(np.cos(a)))) % 360.0)


@dataclass
class ScalingMeta:
    """Min-max ranges per feature; direction features use the full [-1, 1]."""

    ranges: dict
    rated_power: float

    def scale(self, name, v):
        lo, hi = self.ranges[name]
        return (np.asarray(v, dtype=float) - lo) / (hi - lo)

    def unscale(self, name, v):
        lo, hi = self.ranges[name]
        return np.asarray(v, dtype=float) * (hi - lo) + lo

    def features(self, freestream, direction_deg):
        """Scaled (freestream, sin, cos) rows for raw speeds and directions."""
        fs = np.clip(self.scale("freestream", freestream), 0.0, 1.0)
        d = np.deg2rad(np.asarray(direction_deg, dtype=float))
        return np.column_stack(np.broadcast_arrays(
            fs, self.scale("sin_yaw", np.sin(d)), self.scale("cos_yaw", np.cos(d))))

    def to_dict(self):
        return {"ranges": {k: [float(a), float(b)] for k, (a, b) in self.ranges.items()},
                "rated_power": self.rated_power}

    @classmethod
    def from_dict(cls, d):
        return cls({k: tuple(v) for k, v in d["ranges"].items()}, float(d["rated_power"]))

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def build_features(records, training_ids, rated_power, report: Optional[FilterReport] = None,
                   scaling: Optional[ScalingMeta] = None):
    """Population-level features per row.

    Freestream is the maximum training-turbine wind speed at the timestamp
    and direction the circular median yaw over all reporting turbines.
    Freestream is min-max scaled with training-turbine extrema (values
    outside are clipped); sin and cos are mapped from [-1, 1] to [0, 1].
    The target is power over rated power.

    Returns ``(features, scaling)``.
    """
    records = _sorted(records)
    fs = compute_freestream(records, training_ids)
    a = np.deg2rad(records["yaw_deg"].to_numpy())
    trig = pd.DataFrame({"timestamp": records["timestamp"].to_numpy(),
                         "s": np.sin(a), "c": np.cos(a)})
    med = trig.groupby("timestamp")[["s", "c"]].median()
    direction = np.arctan2(med["s"], med["c"])

    has = records["timestamp"].isin(fs.index).to_numpy()
    if report is not None:
        report.removed["features"] += int((~has).sum())
    rec = records[has]
    ts = rec["timestamp"]
    raw_fs = ts.map(fs).to_numpy(dtype=float)
    ang = ts.map(direction).to_numpy(dtype=float)
    if scaling is None:
        train_fs = raw_fs[rec["turbine_id"].isin(set(training_ids)).to_numpy()]
        if train_fs.size == 0:
            raise PipelineError("no training-turbine rows to scale features with")
        lo, hi = float(train_fs.min()), float(train_fs.max())
        if hi <= lo:
            hi = lo + 1.0
        scaling = ScalingMeta({"freestream": (lo, hi), "sin_yaw": (-1.0, 1.0),
                               "cos_yaw": (-1.0, 1.0)}, float(rated_power))
    out = pd.DataFrame({
        "timestamp": ts.to_numpy(),
        "turbine_id": rec["turbine_id"].to_numpy(),
        "freestream": np.clip(scaling.scale("freestream", raw_fs), 0.0, 1.0),
        "sin_yaw": scaling.scale("sin_yaw", np.sin(ang)),
        "cos_yaw": scaling.scale("cos_yaw", np.cos(ang)),
        "target_power": np.clip(rec["power"].to_numpy() / rated_power, 0.0, 1.0),
    })
    return out.reset_index(drop=True), scaling


# -- sampling ------------------------------------------------------------------


def _allocate(capacity, n):
    """Spread ``n`` over cells as evenly as capacity allows.

    Even shares first; leftovers go round-robin to the cells with the most
    spare capacity (ties by cell order).
    """
    capacity = np.asarray(capacity, dtype=int)
    alloc = np.zeros_like(capacity)
    remaining = min(n, int(capacity.sum()))
    while remaining > 0:
        spare = capacity - alloc
        open_ = np.flatnonzero(spare > 0)
        share = remaining // len(open_)
        if share == 0:
            order = open_[np.argsort(-spare[open_], kind="stable")][:remaining]
            alloc[order] += 1
            break
        give = np.minimum(share, spare[open_])
        alloc[open_] += give
        remaining -= int(give.sum())
    return alloc


def _direction_deg(rows):
    s = rows["sin_yaw"].to_numpy() * 2.0 - 1.0
    c = rows["cos_yaw"].to_numpy() * 2.0 - 1.0
    return np.rad2deg(np.arctan2(s, c)) % 360.0


def stratified_sample(rows, yaw_bins=12, power_bins=10, n_per_turbine=250, seed=0):
    """Per turbine, draw ``n_per_turbine`` rows spread evenly over yaw x power cells.

    Deterministic for a given seed; turbines with too few rows contribute
    all of them (with a warning).
    """
    if n_per_turbine < 1:
        raise PipelineError("n_per_turbine must be >= 1")
    rows = rows.reset_index(drop=True)
    yb = np.minimum((_direction_deg(rows) / 360.0 * yaw_bins).astype(int), yaw_bins - 1)
    pb = np.minimum((rows["target_power"].to_numpy() * power_bins).astype(int), power_bins - 1)
    cell = yb * power_bins + pb
    tids = sorted(rows["turbine_id"].unique())
    seeds = np.random.SeedSequence(seed).spawn(len(tids))
    picked = []
    for tid, ss in zip(tids, seeds):
        rng = np.random.default_rng(ss)
        idx = np.flatnonzero(rows["turbine_id"].to_numpy() == tid)
        if len(idx) < n_per_turbine:
            warnings.warn(f"turbine {tid} has only {len(idx)} rows; taking all")
            picked.append(idx)
            continue
        cells, counts = np.unique(cell[idx], return_counts=True)
        alloc = _allocate(counts, n_per_turbine)
        for c, k in zip(cells, alloc):
            members = idx[cell[idx] == c]
            picked.append(np.sort(rng.choice(members, size=k, replace=False)))
    sel = np.sort(np.concatenate(picked)) if picked else np.zeros(0, dtype=int)
    return rows.iloc[sel].reset_index(drop=True)


def train_test_split(rows, n_train, n_test, yaw_bins=12, power_bins=10, seed=0):
    """Disjoint stratified train and test subsets per turbine."""
    ss = np.random.SeedSequence(seed).spawn(2)
    tr_seed, te_seed = (int(s.generate_state(1)[0]) for s in ss)
    rows = rows.reset_index(drop=True).assign(_row=np.arange(len(rows)))
    train = stratified_sample(rows, yaw_bins, power_bins, n_train, tr_seed)
    rest = rows[~rows["_row"].isin(set(train["_row"]))]
    test = stratified_sample(rest, yaw_bins, power_bins, n_test, te_seed)
    return train.drop(columns="_row"), test.drop(columns="_row")


# -- full chain ----------------------------------------------------------------


def _step(report, name, before, after):
    report.removed[name] += len(before) - len(after)
    return after


def clean(records, training_ids, cfg: PipelineConfig = PipelineConfig(),
          report: Optional[FilterReport] = None):
    """Boost capping and filter steps 1-5. Returns ``(records, report, band_stats)``."""
    report = FilterReport() if report is None else report
    report.raw_rows += len(records)
    r = _sorted(records)
    r = cap_power_boost(r, cfg.rated_power, report)
    r = _step(report, "thresholds", r,
              filter_thresholds(r, cfg.pitch_bands, cfg.rpm_bands, cfg.rated_power))
    r = _step(report, "rpm_rate", r, filter_rpm_rate(r, cfg.max_delta_rpm))
    r = _step(report, "stationary", r,
              filter_stationary(r, cfg.stationary_window, cfg.stationary_tolerance,
                                ignore_power=cfg.rated_power))
    r = _step(report, "msd", r, msd_filter(r, cfg.chi2_quantile, report))
    fs = compute_freestream(r, training_ids)
    after, band_stats = band_filter(r, fs, cfg.n_bins, cfg.band_sigma)
    r = _step(report, "band", r, after)
    return r, report, band_stats


def run_pipeline(records, training_ids, cfg: PipelineConfig = PipelineConfig()):
    """Clean records and build features. Returns ``(features, report, scaling)``."""
    r, report, _ = clean(records, training_ids, cfg)
    feats = None
    if not r["turbine_id"].isin(set(training_ids)).any():
        report.removed["features"] += len(r)
    else:
        feats, scaling = build_features(r, training_ids, cfg.rated_power, report)
    report.retained = 0 if feats is None else len(feats)
    if report.retained == 0:
        raise PipelineError(
            f"no rows survive preprocessing; step '{report.dominant_step()}' removed the most")
    return feats, report, scaling
