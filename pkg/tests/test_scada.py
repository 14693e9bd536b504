import warnings

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from windmeta.scada import (FEATURE_COLUMNS, RECORD_COLUMNS, FilterReport, PipelineConfig,
                            PipelineError, ScalingMeta, band_filter, band_statistics,
                            build_features, cap_power_boost, circular_median_deg, clean,
                            compute_freestream, filter_rpm_rate, filter_stationary,
                            filter_thresholds, mahalanobis_sq, msd_filter, read_records,
                            run_pipeline, stratified_sample, train_test_split, write_records)
from windmeta.synthfarm import generate_layout, simulate

RATED = 2000.0
T0 = pd.Timestamp("2021-06-01T00:00:00Z")


def frame(n=1, turbine="A", start=0, **cols):
    """Record frame with sensible defaults for unspecified columns."""
    base = {"power": 1000.0, "wind_speed": 8.0, "yaw_deg": 180.0, "pitch_deg": 0.0, "rpm": 12.0}
    base.update(cols)
    df = pd.DataFrame({k: np.broadcast_to(v, n).copy() for k, v in base.items()})
    df.insert(0, "turbine_id", turbine)
    df.insert(0, "timestamp", T0 + pd.to_timedelta(10 * (start + np.arange(n)), unit="min"))
    return df[RECORD_COLUMNS]


CFG = PipelineConfig()


# -- boost capping -----------------------------------------------------------


def test_cap_power_boost():
    df = frame(3, power=[1.05 * RATED, 0.9 * RATED, RATED])
    rep = FilterReport()
    out = cap_power_boost(df, RATED, rep)
    np.testing.assert_array_equal(out["power"], [RATED, 0.9 * RATED, RATED])
    assert len(out) == 3
    assert rep.modified["cap_power_boost"] == 1
    with pytest.raises(PipelineError):
        cap_power_boost(df, 0.0)


# -- thresholds ----------------------------------------------------------------


def test_thresholds_examples():
    bands = ((0.8, 5.0), (1.0, 90.0))
    rpm = ((0.05, 0.0, 13.0), (1.0, 4.0, 25.0))
    df = pd.concat([
        frame(1, power=0.5 * RATED, pitch_deg=30.0),          # curtailment
        frame(1, power=0.5 * RATED, pitch_deg=0.0, rpm=12.0),  # normal
        frame(1, power=1.0, rpm=16.0),                         # spinning, no power
    ], ignore_index=True)
    out = filter_thresholds(df, bands, rpm, RATED)
    assert out.index.tolist() == [1]


def test_thresholds_rejects_bad_table():
    df = frame(2)
    with pytest.raises(PipelineError, match="increasing"):
        filter_thresholds(df, ((0.8, 5.0), (0.5, 9.0), (1.0, 90.0)), CFG.rpm_bands, RATED)
    with pytest.raises(PipelineError, match="cover"):
        filter_thresholds(df, ((0.8, 5.0),), CFG.rpm_bands, RATED)


# -- rpm rate ------------------------------------------------------------------


def test_rpm_rate():
    df = frame(4, rpm=[10.0, 10.0, 20.0, 20.0])
    out = filter_rpm_rate(df, 5.0)
    assert out.index.tolist() == [0, 1, 3]


def test_rpm_rate_first_row_and_gaps_reset():
    a = frame(2, turbine="A", rpm=[20.0, 20.0])
    b = frame(1, turbine="B", rpm=[0.0])          # first row of B: no predecessor
    c = frame(1, turbine="B", start=5, rpm=[20.0])  # 40 minutes later: gap resets
    df = pd.concat([a, b, c], ignore_index=True)
    assert len(filter_rpm_rate(df, 5.0)) == 4


# -- stationary ----------------------------------------------------------------


def test_stationary_run_removed():
    ws = [5.0, 7.0, 7.0, 7.0, 7.0, 7.0, 7.0, 9.0]
    out = filter_stationary(frame(8, wind_speed=ws, power=np.arange(8.0)), 3, 1e-9)
    assert out["wind_speed"].tolist() == [5.0, 9.0]


def test_stationary_boundaries():
    inc = frame(10, wind_speed=np.arange(10.0), power=np.arange(10.0))
    assert len(filter_stationary(inc, 3, 1e-9)) == 10
    short = frame(4, wind_speed=[1.0, 2.0, 2.0, 3.0], power=np.arange(4.0))
    assert len(filter_stationary(short, 3, 1e-9)) == 4
    with pytest.raises(PipelineError):
        filter_stationary(inc, 1, 1e-9)


def test_stationary_power_run_and_rated_exemption():
    df = frame(6, wind_speed=np.arange(6.0), power=RATED)
    assert len(filter_stationary(df, 3, 1e-9)) == 0
    assert len(filter_stationary(df, 3, 1e-9, ignore_power=RATED)) == 6


def test_stationary_runs_do_not_cross_turbines():
    df = pd.concat([frame(2, turbine="A", wind_speed=4.0, power=[1.0, 2.0]),
                    frame(2, turbine="B", wind_speed=4.0, power=[3.0, 4.0])], ignore_index=True)
    assert len(filter_stationary(df, 3, 1e-9)) == 4


# -- Mahalanobis ---------------------------------------------------------------


def test_mahalanobis_identity_is_euclidean(rng):
    pts = rng.normal(size=(10, 2))
    m = rng.normal(size=2)
    np.testing.assert_allclose(mahalanobis_sq(pts, m, np.eye(2)), ((pts - m) ** 2).sum(1))
    assert mahalanobis_sq(m[None, :], m, np.eye(2))[0] == 0.0


def test_chi2_threshold_value():
    # 99% quantile of chi-square with 2 dof from tables
    assert stats.chi2.ppf(0.99, 2) == pytest.approx(9.21, abs=0.005)


def test_msd_filter_thresholds():
    # a standard-normal cloud with probes near MSD 12 and MSD 5
    rng = np.random.default_rng(0)
    cloud = rng.normal(size=(400, 2))
    pts = np.vstack([cloud, [[0.0, np.sqrt(12.0)]], [[0.0, -np.sqrt(5.0)]]])
    mean, cov = pts.mean(0), np.cov(pts, rowvar=False)
    d2 = mahalanobis_sq(pts, mean, cov)
    df = frame(len(pts), pitch_deg=pts[:, 0], power=pts[:, 1])
    out = msd_filter(df, 0.99)
    kept = set(out.index)
    assert kept == set(np.flatnonzero(d2 <= stats.chi2.ppf(0.99, 2)))
    # probe MSDs land near 12 and 5 under the sample statistics
    assert d2[-2] > 9.21 and d2[-1] < 9.21
    assert len(pts) - 2 not in kept and len(pts) - 1 in kept


def test_msd_singular_covariance_skipped():
    df = frame(5, pitch_deg=0.0, power=[1.0, 2.0, 3.0, 4.0, 5.0])
    rep = FilterReport()
    out = msd_filter(df, 0.99, rep)
    assert len(out) == 5
    assert any("singular" in w for w in rep.warnings)
    rep = FilterReport()
    assert len(msd_filter(frame(2, pitch_deg=[0.0, 1.0], power=[1.0, 5.0]), 0.99, rep)) == 2
    assert any("2 rows" in w for w in rep.warnings)


# -- band filter ---------------------------------------------------------------


def test_band_filter_probes(rng):
    # one freestream bin of 200 rows; probes are judged against frozen bin stats
    cloud = frame(200, power=rng.normal(1000.0, 50.0, 200))
    _, st_ = band_filter(cloud, pd.Series(8.0, index=cloud["timestamp"]), n_bins=1)
    mean, sd = st_.mean[0], st_.std[0]
    for n_sigma, probe, kept in [(1.0, mean, True), (1.0, mean + 3 * sd, False),
                                 (1.0, mean + 0.5 * sd, True), (1.0, mean - 1.5 * sd, False),
                                 (3.0, mean - 1.5 * sd, True), (3.0, mean + 3.5 * sd, False)]:
        d = pd.concat([cloud, frame(1, start=500, power=probe)], ignore_index=True)
        out, _ = band_filter(d, pd.Series(8.0, index=d["timestamp"]), n_bins=1,
                             n_sigma=n_sigma, stats_=st_)
        assert (d.index[-1] in out.index) is kept


def test_band_filter_one_sigma_keeps_central_band(rng):
    cloud = frame(4000, power=rng.normal(1000.0, 50.0, 4000))
    out, _ = band_filter(cloud, pd.Series(8.0, index=cloud["timestamp"]), n_bins=1,
                         n_sigma=1.0)
    assert len(out) / len(cloud) == pytest.approx(0.6827, abs=0.02)


def test_band_filter_degenerate_bins():
    df = frame(5, power=500.0)
    out, _ = band_filter(df, pd.Series(8.0, index=df["timestamp"]), n_bins=1, n_sigma=1.0)
    assert len(out) == 5
    df = frame(2, power=[0.0, 2000.0])
    out, _ = band_filter(df, pd.Series(8.0, index=df["timestamp"]), n_bins=1, n_sigma=0.1)
    assert len(out) == 2


def test_band_statistics_bins():
    st_ = band_statistics([0.0, 0.5, 1.0, 1.0], [1.0, 2.0, 3.0, 5.0], 2)
    np.testing.assert_array_equal(st_.edges, [0.0, 0.5, 1.0])
    np.testing.assert_array_equal(st_.count, [1, 3])
    np.testing.assert_allclose(st_.mean, [1.0, 10 / 3])


# -- features ------------------------------------------------------------------


def test_circular_median():
    assert circular_median_deg([350.0, 10.0, 0.0]) == pytest.approx(0.0, abs=1e-12)
    assert circular_median_deg([90.0]) == pytest.approx(90.0)


def test_features_yaw_periodicity_and_freestream():
    a = frame(1, turbine="A", yaw_deg=0.0, wind_speed=6.0)
    b = frame(1, turbine="A", start=1, yaw_deg=360.0, wind_speed=9.0)
    feats, sc = build_features(pd.concat([a, b], ignore_index=True), ["A"], RATED)
    assert feats.loc[0, "sin_yaw"] == pytest.approx(feats.loc[1, "sin_yaw"], abs=1e-15)
    assert feats.loc[0, "cos_yaw"] == feats.loc[1, "cos_yaw"]
    # single reporting turbine: freestream is its own speed; extrema map to 0 and 1
    assert sc.ranges["freestream"] == (6.0, 9.0)
    assert feats["freestream"].tolist() == [0.0, 1.0]
    assert list(feats.columns) == FEATURE_COLUMNS


def test_features_use_training_turbines_only():
    df = pd.concat([frame(1, turbine="A", wind_speed=5.0, yaw_deg=10.0),
                    frame(1, turbine="B", wind_speed=11.0, yaw_deg=20.0),
                    frame(1, turbine="C", wind_speed=7.0, yaw_deg=30.0),
                    frame(1, turbine="C", start=1, wind_speed=8.0)], ignore_index=True)
    fs = compute_freestream(df, ["A", "C"])
    assert fs.tolist() == [7.0, 8.0]
    rep = FilterReport()
    feats, _ = build_features(df[df["turbine_id"] != "C"], ["A"], RATED, rep)
    assert len(feats) == 2
    # median yaw over all reporting turbines
    ang = np.arctan2(feats["sin_yaw"] * 2 - 1, feats["cos_yaw"] * 2 - 1)
    np.testing.assert_allclose(np.rad2deg(ang), 15.0, atol=1e-9)
    feats, _ = build_features(df, ["C"], RATED, rep)
    assert rep.removed["features"] == 0
    rep = FilterReport()
    build_features(df, ["B"], RATED, rep)
    assert rep.removed["features"] == 1  # C's row at the second stamp has no training record


@given(st.lists(st.floats(0, 30, allow_nan=False), min_size=2, max_size=30))
def test_scaling_roundtrip_and_range(ws):
    df = frame(len(ws), wind_speed=ws, yaw_deg=np.linspace(0, 359, len(ws)))
    feats, sc = build_features(df, ["A"], RATED)
    for c in ("freestream", "sin_yaw", "cos_yaw", "target_power"):
        assert feats[c].between(0, 1).all()
    v = np.asarray(ws)
    np.testing.assert_allclose(sc.unscale("freestream", sc.scale("freestream", v)), v,
                               rtol=0, atol=1e-12 * max(1.0, v.max()))
    assert ScalingMeta.from_dict(sc.to_dict()) == sc


def test_scaling_json_roundtrip(tmp_path):
    sc = ScalingMeta({"freestream": (1.5, 20.0), "sin_yaw": (-1.0, 1.0),
                      "cos_yaw": (-1.0, 1.0)}, RATED)
    sc.to_json(tmp_path / "s.json")
    assert ScalingMeta.from_json(tmp_path / "s.json") == sc
    f = sc.features([1.5, 20.0, 30.0], [90.0, 180.0, 270.0])
    np.testing.assert_allclose(f[:, 0], [0.0, 1.0, 1.0])
    np.testing.assert_allclose(f[:, 1], [1.0, 0.5, 0.0], atol=1e-15)
    np.testing.assert_allclose(f[:, 2], [0.5, 0.0, 0.5], atol=1e-15)


# -- stratified sampling -------------------------------------------------------


def _grid_rows(per_cell, yaw_bins=4, power_bins=4, turbine="A"):
    rows = []
    for i in range(yaw_bins):
        for j in range(power_bins):
            k = per_cell[i][j] if np.ndim(per_cell) else per_cell
            ang = np.deg2rad((i + 0.5) * 360.0 / yaw_bins)
            rows.append(pd.DataFrame({
                "turbine_id": turbine, "freestream": 0.5,
                "sin_yaw": np.full(k, (np.sin(ang) + 1) / 2),
                "cos_yaw": np.full(k, (np.cos(ang) + 1) / 2),
                "target_power": np.full(k, (j + 0.5) / power_bins)}))
    df = pd.concat(rows, ignore_index=True)
    df.insert(0, "timestamp", T0 + pd.to_timedelta(10 * np.arange(len(df)), unit="min"))
    return df


def _cells(rows, yaw_bins=4, power_bins=4):
    s, c = rows["sin_yaw"] * 2 - 1, rows["cos_yaw"] * 2 - 1
    yaw = np.rad2deg(np.arctan2(s, c)) % 360
    return (yaw // (360 / yaw_bins)).astype(int) * power_bins + \
        np.minimum((rows["target_power"] * power_bins).astype(int), power_bins - 1)


def test_stratified_even_split():
    out = stratified_sample(_grid_rows(50), 4, 4, 160, seed=0)
    assert len(out) == 160
    assert set(np.bincount(_cells(out), minlength=16)) == {10}


def test_stratified_redistributes_deficits():
    per = np.full((4, 4), 50)
    per[0, :] = [0, 2, 0, 3]
    out = stratified_sample(_grid_rows(per), 4, 4, 160, seed=0)
    counts = np.bincount(_cells(out), minlength=16)
    assert len(out) == 160
    assert counts[1] == 2 and counts[3] == 3
    assert counts.max() - counts[counts >= 10].min() <= 1


def test_stratified_flattens_skewed_yaw(rng):
    per = np.outer([400, 100, 30, 10], [10, 10, 10, 10])
    rows = _grid_rows(per)
    out = stratified_sample(rows, 4, 4, 200, seed=1)
    yaw_in = np.bincount(_cells(rows) // 4)
    yaw_out = np.bincount(_cells(out) // 4)
    assert yaw_out.max() / yaw_out.min() < yaw_in.max() / yaw_in.min()


def test_stratified_deterministic_and_short_turbines():
    rows = pd.concat([_grid_rows(5, turbine="A"), _grid_rows(1, turbine="B")], ignore_index=True)
    with pytest.warns(UserWarning, match="B"):
        a = stratified_sample(rows, 4, 4, 40, seed=3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        b = stratified_sample(rows, 4, 4, 40, seed=3)
    pd.testing.assert_frame_equal(a, b)
    assert (a["turbine_id"] == "B").sum() == 16
    with pytest.raises(PipelineError):
        stratified_sample(rows, 4, 4, 0)


def test_train_test_disjoint():
    rows = _grid_rows(20)
    tr, te = train_test_split(rows, 100, 100, 4, 4, seed=0)
    assert len(tr) == len(te) == 100
    assert not set(tr["timestamp"]) & set(te["timestamp"])


# -- full pipeline -------------------------------------------------------------


@pytest.fixture(scope="module")
def farm_records():
    layout = generate_layout(2, 3)
    rec, _ = simulate(layout, n_timestamps=600, seed=4)
    return rec, list(layout.ids[::2])


def test_pipeline_report_reconciles(farm_records):
    rec, train = farm_records
    feats, rep, sc = run_pipeline(rec, train)
    assert rep.reconciles()
    assert rep.raw_rows == len(rec)
    assert rep.retained == len(feats)
    assert feats[["freestream", "sin_yaw", "cos_yaw", "target_power"]].stack().between(0, 1).all()
    assert feats.equals(feats.sort_values(["turbine_id", "timestamp"], kind="mergesort"))


def test_pipeline_idempotent(farm_records):
    rec, train = farm_records
    once, rep1, band = clean(rec, train)
    # rerun steps 1-3 and the band filter with the first pass's bin statistics
    # and freestream frozen
    pre_band = msd_filter(filter_stationary(
        filter_rpm_rate(filter_thresholds(cap_power_boost(rec, RATED), CFG.pitch_bands,
                                          CFG.rpm_bands, RATED), CFG.max_delta_rpm),
        CFG.stationary_window, CFG.stationary_tolerance, ignore_power=RATED), CFG.chi2_quantile)
    fs = compute_freestream(pre_band, train)
    again = filter_thresholds(once, CFG.pitch_bands, CFG.rpm_bands, CFG.rated_power)
    again = filter_rpm_rate(again, CFG.max_delta_rpm)
    again = filter_stationary(again, CFG.stationary_window, CFG.stationary_tolerance,
                              ignore_power=CFG.rated_power)
    again, _ = band_filter(again, fs, CFG.n_bins, CFG.band_sigma, stats_=band)
    assert len(again) == len(once)


def test_pipeline_empty_result_names_step(farm_records):
    rec, train = farm_records
    cfg = PipelineConfig(pitch_bands=((1.0, -90.0),))
    with pytest.raises(PipelineError, match="thresholds"):
        run_pipeline(rec, train, cfg)


def test_records_csv_roundtrip(farm_records, tmp_path):
    rec, _ = farm_records
    write_records(rec, tmp_path / "r.csv")
    header = (tmp_path / "r.csv").read_text().splitlines()[0]
    assert header == ",".join(RECORD_COLUMNS)
    back = read_records(tmp_path / "r.csv")
    pd.testing.assert_series_equal(back["timestamp"], rec["timestamp"], check_names=False,
                                   check_dtype=False)
    np.testing.assert_allclose(back["power"], rec["power"], rtol=1e-9)
    pd.DataFrame({"x": [1]}).to_csv(tmp_path / "bad.csv", index=False)
    with pytest.raises(PipelineError, match="missing"):
        read_records(tmp_path / "bad.csv")


def test_config_dict_roundtrip():
    assert PipelineConfig.from_dict(CFG.to_dict()) == CFG
