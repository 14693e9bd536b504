import filecmp
import json
import subprocess
import sys

import numpy as np
import pandas as pd
import pytest

from windmeta.cli import load_config, main
from windmeta.draws import PosteriorDraws
from windmeta.models import param_count

SMALL = {
    "seed": 3,
    "layout": {"rows": 2, "cols": 4},
    "n_timestamps": 1200,
    "anomalies": {"segments_per_kind": 1, "segment_length": 6},
    "train_per_turbine": 80,
    "test_per_turbine": 80,
    "spline": {"order": 3, "interior_knots": 1},
    "model": {"variant": "cp"},
    "sampler": {"chains": 2, "warmup": 150, "draws": 150},
    "predict": {"n_speeds": 9, "samples_per_draw": 2},
    "knot_sweep": {"train_rows": 150, "test_rows": 100,
                   "sampler": {"chains": 2, "warmup": 100, "draws": 100}},
}


def write_config(path, **over):
    cfg = json.loads(json.dumps(SMALL))
    cfg.update(over)
    path.write_text(json.dumps(cfg, indent=2))
    return path


def run(cfg_path, *verbs, extra=()):
    for v in verbs:
        args = [v, "--config", str(cfg_path), *extra]
        if v == "fit":
            args.append("--allow-unconverged")
        code = main(args)
        if code != 0:
            return code
    return 0


VERBS = ("simulate", "preprocess", "fit", "predict", "score", "diagnose")


@pytest.fixture(scope="module")
def workflow(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "cfg.json", output_dir=str(root / "a"))
    assert run(cfg, *VERBS) == 0
    return root, cfg


def test_outputs_exist(workflow):
    root, _ = workflow
    out = root / "a"
    for name in ["scada.csv", "truth.csv", "layout.csv", "anomaly_labels.csv", "features.csv",
                 "train.csv", "test.csv", "filter_report.json", "scaling.json",
                 "fit_cp/draws.csv", "fit_cp/draws.json", "fit_cp/diagnostics.csv",
                 "predictions_cp.csv", "scores_cp.csv", "scores_cp_summary.csv",
                 "diagnostics_cp.csv"]:
        assert (out / name).exists(), name
    assert not list(out.rglob("*.partial"))


def test_simulate_row_count_and_headers(workflow):
    out = workflow[0] / "a"
    scada = pd.read_csv(out / "scada.csv")
    assert len(scada) == 8 * 1200
    assert list(scada.columns) == ["timestamp", "turbine_id", "power", "wind_speed", "yaw_deg",
                                   "pitch_deg", "rpm"]
    assert list(pd.read_csv(out / "truth.csv").columns) == ["timestamp", "turbine_id", "u_eff",
                                                            "mu"]


def test_preprocess_split_and_report(workflow):
    out = workflow[0] / "a"
    rep = json.loads((out / "filter_report.json").read_text())
    assert sum(rep["removed"].values()) == rep["raw_rows"] - rep["retained"]
    tr = pd.read_csv(out / "train.csv")
    te = pd.read_csv(out / "test.csv")
    key = lambda d: set(zip(d["timestamp"], d["turbine_id"]))
    assert not key(tr) & key(te)
    assert list(tr.columns) == ["timestamp", "turbine_id", "freestream", "sin_yaw", "cos_yaw",
                                "target_power"]
    # the injected curtailment rows are gone
    lab = pd.read_csv(out / "anomaly_labels.csv").fillna("")
    bad = key(lab[lab["label"] == "curtailment"])
    assert bad and not bad & key(pd.read_csv(out / "features.csv"))


def test_fit_param_columns(workflow):
    root, cfg = workflow
    d = PosteriorDraws.from_csv(root / "a" / "fit_cp" / "draws.csv")
    assert d.n_params == param_count(d.spec)
    assert d.draws.shape[:2] == (2, 150)


def test_predict_table(workflow):
    pred = pd.read_csv(workflow[0] / "a" / "predictions_cp.csv")
    assert set(pred["direction_deg"]) == {90.0, 180.0, 270.0, 360.0}
    assert len(pred) == 8 * 4 * 9
    assert (pred["q2.5"] <= pred["mean"]).all() and (pred["mean"] <= pred["q97.5"]).all()


def test_score_partition_and_means(workflow):
    out = workflow[0] / "a"
    sc = pd.read_csv(out / "scores_cp.csv")
    layout = pd.read_csv(out / "layout.csv")
    flags = dict(zip(layout["turbine_id"], layout["is_training"].astype(int)))
    assert all(flags[t] == o for t, o in zip(sc["turbine_id"], sc["observed"]))
    summ = pd.read_csv(out / "scores_cp_summary.csv")
    for obs, grp in sc.groupby("observed"):
        row = summ[summ["observed"] == obs].iloc[0]
        assert row["nmse"] == pytest.approx(grp["nmse"].mean(), rel=1e-9)
        assert row["jll"] == pytest.approx(grp["jll"].mean(), rel=1e-9)


def test_diagnose_max_matches_fit(workflow, capsys):
    root, cfg = workflow
    tab = pd.read_csv(root / "a" / "diagnostics_cp.csv")
    fit_tab = pd.read_csv(root / "a" / "fit_cp" / "diagnostics.csv")
    np.testing.assert_allclose(tab["rhat"].max(), fit_tab["rhat"].max(), rtol=1e-9)


def test_rerun_byte_identical(workflow):
    root, _ = workflow
    cfg = write_config(root / "cfg_b.json", output_dir=str(root / "b"))
    assert run(cfg, *VERBS) == 0
    a, b = root / "a", root / "b"
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    match, mismatch, errors = filecmp.cmpfiles(a, b, [str(f) for f in files], shallow=False)
    assert mismatch == [] and errors == []


def test_seed_flag_changes_output(workflow):
    root, cfg = workflow
    assert run(cfg, "simulate", extra=["--seed", "4", "--output-dir", str(root / "c")]) == 0
    assert not filecmp.cmp(root / "a" / "scada.csv", root / "c" / "scada.csv", shallow=False)


def test_unconverged_refused(workflow, capsys):
    root, _ = workflow
    out = root / "u"
    out.mkdir()
    for f in ("train.csv", "test.csv", "scaling.json"):
        (out / f).write_bytes((root / "a" / f).read_bytes())
    cfg = write_config(root / "cfg_u.json", output_dir=str(out),
                       sampler={"chains": 2, "warmup": 30, "draws": 30})
    assert main(["fit", "--config", str(cfg)]) == 3
    assert "allow-unconverged" in capsys.readouterr().err
    assert not (out / "fit_cp" / "draws.csv").exists()
    assert (out / "fit_cp" / "diagnostics.csv.partial").exists()


def test_np_writes_file_per_turbine_and_knot_sweep(workflow):
    root, _ = workflow
    out = root / "n"
    out.mkdir()
    for f in ("features.csv", "train.csv", "test.csv", "scaling.json", "layout.csv"):
        (out / f).write_bytes((root / "a" / f).read_bytes())
    cfg = write_config(root / "cfg_n.json", output_dir=str(out), model={"variant": "np"},
                       sampler={"chains": 2, "warmup": 100, "draws": 100})
    assert run(cfg, "fit", "score") == 0
    layout = pd.read_csv(out / "layout.csv")
    train_ids = sorted(layout.loc[layout["is_training"] == 1, "turbine_id"])
    assert sorted(p.stem[6:] for p in (out / "fit_np").glob("draws_*.csv")) == train_ids
    assert main(["diagnose", "--config", str(cfg), "--knot-sweep", "0..2"]) == 0
    sweep = pd.read_csv(out / "knot_sweep.csv")
    assert sweep["interior_knots"].tolist() == [0, 1, 2]
    assert sweep["basis_per_feature"].tolist() == [3, 4, 5]  # order 3: k + 3


def test_coordinate_prediction_needs_meta(workflow, capsys):
    root, _ = workflow
    cfg = write_config(root / "cfg_p.json", output_dir=str(root / "a"),
                       predict={"coords": [[0.5, 0.5]]})
    assert main(["predict", "--config", str(cfg)]) == 1
    assert "META" in capsys.readouterr().err


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "sampler": {"chains": 0}\n}\n')
    assert main(["fit", "--config", str(bad)]) == 1
    assert "bad.json:2" in capsys.readouterr().err
    bad.write_text('{\n  "seed": 1,\n  "bogus": 2\n}\n')
    assert main(["simulate", "--config", str(bad)]) == 1
    assert "bad.json:3" in capsys.readouterr().err
    bad.write_text('{\n  "seed": 1,\n  "x" 2\n}\n')
    assert main(["simulate", "--config", str(bad)]) == 1
    assert "bad.json:3:" in capsys.readouterr().err
    assert main(["score", "--output-dir", str(tmp_path / "empty")]) == 1
    assert "run 'fit' first" in capsys.readouterr().err


def test_missing_output_dir_created(tmp_path):
    cfg = write_config(tmp_path / "c.json", output_dir=str(tmp_path / "new" / "deep"),
                       n_timestamps=20, anomalies={"segments_per_kind": 0})
    assert main(["simulate", "--config", str(cfg)]) == 0
    assert (tmp_path / "new" / "deep" / "scada.csv").exists()


def test_load_config_defaults():
    cfg = load_config(None, {"variant": "pp"})
    assert cfg.variant.value == "PP"
    assert cfg.sampler_config().chains == 4
    assert len(cfg.farm_layout().training_ids) == 5


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "windmeta", "--help"], capture_output=True,
                       text=True)
    assert r.returncode == 0
    for verb in VERBS:
        assert verb in r.stdout
