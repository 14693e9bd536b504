"""Command-line workflow: simulate, preprocess, fit, predict, score, diagnose.

Every command reads one JSON run configuration (``--config``), optionally
overridden by flags, and writes plain CSV/JSON files into the configured
output directory. Outputs are first written with a ``.partial`` suffix and
renamed only once the command has succeeded, so a failed command leaves no
half-written result behind. Identical configuration and seed give
byte-identical files.

Files written under ``output_dir``::

    simulate    scada.csv  truth.csv  layout.csv  [anomaly_labels.csv]
    preprocess  features.csv  train.csv  test.csv  filter_report.json  scaling.json
    fit         fit_<variant>/draws.csv (+ .json)  fit_<variant>/diagnostics.csv
                (NP: fit_np/draws_<turbine>.csv per turbine)
    predict     predictions_<variant>.csv
    score       scores_<variant>.csv  scores_<variant>_summary.csv
    diagnose    diagnostics_<variant>.csv  [knot_sweep.csv]
"""

import argparse
import contextlib
import json
import os
import re
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from .beta_glm import squeeze_boundary
from .diagnostics import ChainDiagnostics
from .draws import PosteriorDraws
from .metrics import aggregate_scores, jll, nmse, score_table
from .models import FarmLayout, ModelError, ModelSpec, Variant, coefficient_draws, predict_power
from .nuts import SamplerConfig, SamplerError
from .scada import (FEATURE_COLUMNS, PipelineConfig, PipelineError, ScalingMeta, read_records,
                    run_pipeline, train_test_split, write_records)
from .splines import DEFAULT_SPLINE, FOUR_KNOT_SPLINE, SplineConfig, SplineConfigError
from .synthfarm import WakeConfig, WindProcess, generate_layout, inject_anomalies, simulate
from .workflow import design_for, fit, fit_np, predictive_draws, score_turbines

__all__ = ["RunConfig", "ConfigError", "load_config", "main", "cmd_simulate", "cmd_preprocess",
           "cmd_fit", "cmd_predict", "cmd_score", "cmd_diagnose"]

VERBS = ("simulate", "preprocess", "fit", "predict", "score", "diagnose")
SPLINE_PRESETS = {"default": DEFAULT_SPLINE, "four_knot": FOUR_KNOT_SPLINE}


class ConfigError(ValueError):
    pass


class UnconvergedError(RuntimeError):
    pass


@dataclass
class RunConfig:
    """Declarative description of one experiment.

    Nested sections are plain dicts passed to the owning module's config
    type, so every threshold those types expose can be overridden here.
    """

    output_dir: str = "run"
    records_path: Optional[str] = None
    seed: int = 0
    # farm: regular grid unless a layout CSV (turbine_id,x,y[,is_training]) is given
    layout: dict = field(default_factory=lambda: {"rows": 4, "cols": 5, "jitter": 0.0})
    layout_path: Optional[str] = None
    training: dict = field(default_factory=lambda: {"every_kth": 4, "ids": None})
    # simulate
    n_timestamps: int = 5000
    wake: dict = field(default_factory=dict)
    wind: dict = field(default_factory=dict)
    anomalies: dict = field(default_factory=lambda: {"segments_per_kind": 0,
                                                     "segment_length": 12})
    # preprocess
    pipeline: dict = field(default_factory=dict)
    train_per_turbine: int = 250
    test_per_turbine: int = 250
    # model and sampler
    spline: object = "default"
    model: dict = field(default_factory=lambda: {"variant": "meta"})
    sampler: dict = field(default_factory=lambda: {"metric": "dense"})
    # predict
    predict: dict = field(default_factory=lambda: {
        "turbines": None, "coords": None, "directions_deg": [90.0, 180.0, 270.0, 360.0],
        "speed_min": 0.0, "speed_max": 20.0, "n_speeds": 41, "quantiles": [0.025, 0.975],
        "samples_per_draw": 4})
    # diagnose --knot-sweep
    knot_sweep: dict = field(default_factory=lambda: {
        "turbine": None, "train_rows": 4000, "test_rows": 1000, "sampler": {}})

    # -- derived objects ---------------------------------------------------------

    @property
    def out(self):
        return Path(self.output_dir)

    @property
    def variant(self):
        return Variant.parse(self.model.get("variant", "meta"))

    def records_file(self):
        return Path(self.records_path) if self.records_path else self.out / "scada.csv"

    def spline_config(self):
        if isinstance(self.spline, str):
            if self.spline not in SPLINE_PRESETS:
                raise ConfigError(f"spline: unknown preset {self.spline!r}")
            return SPLINE_PRESETS[self.spline]
        return SplineConfig.from_dict(self.spline)

    def farm_layout(self):
        if self.layout_path:
            layout = FarmLayout.from_frame(_read_layout(self.layout_path))
        else:
            lay = dict(self.layout)
            layout = generate_layout(int(lay.get("rows", 4)), int(lay.get("cols", 5)),
                                     float(lay.get("jitter", 0.0)), self.seed)
        ids = self.training.get("ids")
        if ids:
            return layout.with_training([str(i) for i in ids])
        if self.layout_path and any(t.is_training for t in layout.turbines) \
                and not self.training.get("every_kth"):
            return layout
        return layout.every_kth_training(int(self.training.get("every_kth", 4)))

    def model_spec(self, layout=None, spline=None):
        extra = {k: v for k, v in self.model.items() if k != "variant"}
        return ModelSpec(self.variant, spline=spline or self.spline_config(),
                         layout=self.farm_layout() if layout is None else layout, **extra)

    def sampler_config(self, overrides=None):
        d = {"seed": self.seed, **self.sampler, **(overrides or {})}
        return SamplerConfig(**d)

    def pipeline_config(self):
        return PipelineConfig.from_dict(self.pipeline)


def _read_layout(path):
    df = pd.read_csv(path, dtype={"turbine_id": str})
    if "is_training" not in df:
        df["is_training"] = 0
    return df


def _key_line(text, key):
    for i, line in enumerate(text.splitlines(), 1):
        if re.search(r'"%s"\s*:' % re.escape(key), line):
            return i
    return None


def load_config(path=None, overrides=None):
    """Read a :class:`RunConfig` from JSON and apply flag overrides.

    Errors name the offending line of the file where possible.
    """
    raw, text, src = {}, "", "<defaults>"
    if path is not None:
        src = str(path)
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"{src}: cannot read config ({exc.strerror})") from None
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{src}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{src}:1: top level must be a JSON object")

    def where(key):
        line = _key_line(text, key)
        return f"{src}:{line}" if line else src

    known = {f.name for f in fields(RunConfig)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{where(key)}: unknown key {key!r}")
    defaults = RunConfig()
    merged = {}
    for key, value in raw.items():
        default = getattr(defaults, key)
        if isinstance(default, dict) and isinstance(value, dict) and key not in ("model",):
            value = {**default, **value}
        merged[key] = value
    cfg = RunConfig(**merged)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "variant":
            cfg.model = {**cfg.model, "variant": value}
        else:
            setattr(cfg, key, value)

    # validate eagerly so errors point at the config rather than a later step
    checks = [
        ("seed", lambda: int(cfg.seed) >= 0),
        ("n_timestamps", lambda: int(cfg.n_timestamps) >= 1),
        ("train_per_turbine", lambda: int(cfg.train_per_turbine) >= 1),
        ("test_per_turbine", lambda: int(cfg.test_per_turbine) >= 1),
    ]
    for key, ok in checks:
        try:
            good = ok()
        except (TypeError, ValueError):
            good = False
        if not good:
            raise ConfigError(f"{where(key)}: {key} must be a positive integer, "
                              f"got {getattr(cfg, key)!r}")
    builders = [
        ("model", lambda: cfg.variant),
        ("spline", cfg.spline_config),
        ("wake", lambda: WakeConfig(**cfg.wake)),
        ("wind", lambda: WindProcess.from_dict(cfg.wind)),
        ("pipeline", cfg.pipeline_config),
        ("sampler", cfg.sampler_config),
        ("layout", cfg.farm_layout),
        ("training", cfg.farm_layout),
        ("model", lambda: cfg.model_spec()),
    ]
    for key, build in builders:
        try:
            build()
        except (TypeError, ValueError, KeyError, OSError) as exc:
            raise ConfigError(f"{where(key)}: invalid {key}: {exc}") from None
    return cfg


# -- output handling ------------------------------------------------------------


class _Outputs:
    """Collects outputs under ``.partial`` names and commits them on success."""

    def __init__(self):
        self.paths = []

    def __call__(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.paths.append(path)
        return path.with_name(path.name + ".partial")

    def commit(self):
        for p in self.paths:
            os.replace(p.with_name(p.name + ".partial"), p)

    def discard(self):
        for p in self.paths:
            with contextlib.suppress(FileNotFoundError):
                p.with_name(p.name + ".partial").unlink()


@contextlib.contextmanager
def _outputs():
    outs = _Outputs()
    try:
        yield outs
    except BaseException:
        outs.discard()
        raise
    outs.commit()


def _write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True,
                  default=lambda o: o.tolist() if hasattr(o, "tolist") else str(o))
        fh.write("\n")


def _write_csv(df, path):
    df.to_csv(path, index=False, float_format="%.10g")


def _write_draws(draws, csv_path, outs):
    # PosteriorDraws writes a sidecar next to the CSV; route both through outs
    csv_path = Path(csv_path)
    json_path = csv_path.with_suffix(".json")
    tmp_csv = outs(csv_path)
    tmp_json = outs(json_path)
    draws.to_csv(tmp_csv)
    os.replace(tmp_csv.with_suffix(".json"), tmp_json)


def _read_features(path):
    if not Path(path).exists():
        raise FileNotFoundError(f"{path} not found; run 'preprocess' first")
    df = pd.read_csv(path, dtype={"turbine_id": str})
    df["timestamp"] = pd.to_datetime(df["timestamp"], utc=True)
    return df


def _fit_dir(cfg):
    return cfg.out / f"fit_{cfg.variant.value.lower()}"


def _load_fit(cfg):
    """The fitted draws: one PosteriorDraws, or a dict of them for NP."""
    d = _fit_dir(cfg)
    if cfg.variant is Variant.NP:
        files = sorted(d.glob("draws_*.csv"))
        if not files:
            raise FileNotFoundError(f"no NP fits in {d}; run 'fit' first")
        return {f.stem[len("draws_"):]: PosteriorDraws.from_csv(f) for f in files}
    path = d / "draws.csv"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run 'fit' first")
    return PosteriorDraws.from_csv(path)


def _fit_layout(fits):
    first = next(iter(fits.values())) if isinstance(fits, dict) else fits
    return first.spec.layout, first.spec.spline


# -- commands ---------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig):
    """Simulate SCADA records (plus ground truth) for the configured farm."""
    layout = cfg.farm_layout()
    wake = WakeConfig(**cfg.wake)
    records, truth = simulate(layout, wake, int(cfg.n_timestamps),
                              WindProcess.from_dict(cfg.wind), seed=cfg.seed)
    an = dict(cfg.anomalies)
    labels = None
    if int(an.get("segments_per_kind", 0)) > 0:
        records, labels = inject_anomalies(records, wake, seed=cfg.seed + 1, **an)
    with _outputs() as outs:
        write_records(records, outs(cfg.records_file()))
        write_records(truth, outs(cfg.out / "truth.csv"),
                      columns=["timestamp", "turbine_id", "u_eff", "mu"])
        _write_csv(layout.to_frame(), outs(cfg.out / "layout.csv"))
        if labels is not None:
            lab = records[["timestamp", "turbine_id"]].assign(label=labels.to_numpy())
            write_records(lab, outs(cfg.out / "anomaly_labels.csv"),
                          columns=["timestamp", "turbine_id", "label"])
    print(f"layout: {len(layout)} turbines, {len(layout.training_ids)} training "
          f"({', '.join(layout.training_ids)})")
    print(f"wrote {len(records)} records for {cfg.n_timestamps} timestamps to {cfg.records_file()}")
    return records, truth


def cmd_preprocess(cfg: RunConfig):
    """Filter, build features and write stratified train/test splits."""
    layout = cfg.farm_layout()
    path = cfg.records_file()
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run 'simulate' or set records_path")
    records = read_records(path)
    feats, report, scaling = run_pipeline(records, layout.training_ids, cfg.pipeline_config())
    pc = cfg.pipeline_config()
    train, test = train_test_split(feats, int(cfg.train_per_turbine), int(cfg.test_per_turbine),
                                   pc.yaw_bins, pc.power_bins, seed=cfg.seed)
    with _outputs() as outs:
        write_records(feats, outs(cfg.out / "features.csv"), FEATURE_COLUMNS)
        write_records(train, outs(cfg.out / "train.csv"), FEATURE_COLUMNS)
        write_records(test, outs(cfg.out / "test.csv"), FEATURE_COLUMNS)
        report.to_json(outs(cfg.out / "filter_report.json"))
        scaling.to_json(outs(cfg.out / "scaling.json"))
    removed = ", ".join(f"{k}={v}" for k, v in report.removed.items())
    print(f"raw {report.raw_rows} rows, retained {report.retained} "
          f"({100 * report.retention:.1f}%); removed {removed}; "
          f"capped {report.modified['cap_power_boost']}")
    print(f"train {len(train)} rows, test {len(test)} rows")
    return feats, report


def _check_converged(draws, label, diag_path, allow):
    diag = draws.diagnostics
    print(f"{label}: {diag.summary_line()}")
    if diag.converged() or allow:
        return
    # leave the diagnostics behind (as .partial) so the failure can be inspected
    diag.to_csv(diag_path.with_name(diag_path.name + ".partial"))
    raise UnconvergedError(
        f"{label}: not converged (max R-hat {diag.max_rhat:.4f} > 1.01 or min ESS "
        f"{diag.min_ess:.0f} < 400); diagnostics in {diag_path}.partial; "
        f"rerun with --allow-unconverged to keep the draws")


def cmd_fit(cfg: RunConfig, allow_unconverged=False):
    """Fit the configured variant to ``train.csv``."""
    train = _read_features(cfg.out / "train.csv")
    spec = cfg.model_spec()
    sampler = cfg.sampler_config()
    d = _fit_dir(cfg)
    d.mkdir(parents=True, exist_ok=True)
    try:
        if spec.variant is Variant.NP:
            fits = fit_np(spec, train, sampler)
        else:
            fits = {None: fit(spec, train, sampler)}
    except SamplerError as exc:
        if exc.diagnostics is not None:
            if hasattr(exc.diagnostics, "to_csv"):
                p = d / "diagnostics.csv.partial"
                exc.diagnostics.to_csv(p)
            else:
                p = d / "diagnostics.json.partial"
                _write_json(exc.diagnostics, p)
            raise SamplerError(f"{exc}; diagnostics in {p}", exc.diagnostics) from None
        raise
    with _outputs() as outs:
        for tid, draws in fits.items():
            name = "draws.csv" if tid is None else f"draws_{tid}.csv"
            diag_name = "diagnostics.csv" if tid is None else f"diagnostics_{tid}.csv"
            _check_converged(draws, spec.variant.value if tid is None else f"NP {tid}",
                             d / diag_name, allow_unconverged)
            _write_draws(draws, d / name, outs)
            draws.diagnostics.to_csv(outs(d / diag_name))
    return fits if spec.variant is Variant.NP else fits[None]


def _prediction_locations(cfg, fits, layout):
    p = cfg.predict
    if p.get("coords"):
        if cfg.variant is not Variant.META:
            raise ModelError("coordinate prediction needs a META fit; "
                             f"the configured variant is {cfg.variant.value}")
        return [(f"loc{i}", float(x), float(y), None) for i, (x, y) in enumerate(p["coords"])]
    ids = p.get("turbines") or list(layout.ids)
    return [(t, layout[t].x, layout[t].y, t) for t in ids]


def cmd_predict(cfg: RunConfig):
    """Predictive mean and quantiles over a speed x direction grid per location."""
    fits = _load_fit(cfg)
    layout, spline = _fit_layout(fits)
    scaling_path = cfg.out / "scaling.json"
    if not scaling_path.exists():
        raise FileNotFoundError(f"{scaling_path} not found; run 'preprocess' first")
    scaling = ScalingMeta.from_json(scaling_path)
    p = cfg.predict
    speeds = np.linspace(float(p["speed_min"]), float(p["speed_max"]), int(p["n_speeds"]))
    dirs = [float(x) for x in p["directions_deg"]]
    levels = tuple(float(q) for q in p["quantiles"])
    grid_d = np.repeat(dirs, len(speeds))
    grid_s = np.tile(speeds, len(dirs))
    feats = scaling.features(grid_s, grid_d)
    grid = pd.DataFrame({"freestream": feats[:, 0], "sin_yaw": feats[:, 1], "cos_yaw": feats[:, 2]})
    X = design_for(grid, spline)
    seeds = np.random.SeedSequence([cfg.seed, 0x5EED]).spawn(len(_prediction_locations(
        cfg, fits, layout)))
    frames = []
    for (name, x, y, tid), ss in zip(_prediction_locations(cfg, fits, layout), seeds):
        rng = np.random.default_rng(ss)
        if isinstance(fits, dict):
            if tid not in fits:
                raise ModelError(f"no NP fit for turbine {tid}")
            eta, zeta = coefficient_draws(fits[tid], tid)
        elif tid is None:
            eta, zeta = coefficient_draws(fits, coords=(x, y))
        else:
            eta, zeta = coefficient_draws(fits, tid, rng=rng)
        pred = predict_power(eta, zeta, X, levels, rng=rng,
                             samples_per_draw=int(p.get("samples_per_draw", 1)))
        df = pd.DataFrame({"location": name, "x": x, "y": y, "direction_deg": grid_d,
                           "freestream": grid_s, "freestream_scaled": feats[:, 0],
                           "mean": pred.mean})
        for q, col in zip(levels, pred.quantiles.T):
            df[f"q{100 * q:g}"] = col
        frames.append(df)
    out = pd.concat(frames, ignore_index=True)
    path = cfg.out / f"predictions_{cfg.variant.value.lower()}.csv"
    with _outputs() as outs:
        _write_csv(out, outs(path))
    print(f"wrote {len(out)} prediction rows for {len(frames)} locations to {path}")
    return out


def cmd_score(cfg: RunConfig):
    """NMSE and JLL per turbine on ``test.csv``, with observed/unobserved means."""
    fits = _load_fit(cfg)
    layout, spline = _fit_layout(fits)
    test = _read_features(cfg.out / "test.csv")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5C0E]))
    if isinstance(fits, dict):
        layout = layout.with_training(list(fits))
        test = test[test["turbine_id"].isin(set(fits))]
    rows = score_turbines(fits, test, spline, layout, rng)
    model = cfg.variant.value
    table = score_table(rows, model=model)
    summary = aggregate_scores(table)
    stem = f"scores_{model.lower()}"
    with _outputs() as outs:
        _write_csv(table.drop(columns="model"), outs(cfg.out / f"{stem}.csv"))
        _write_csv(summary, outs(cfg.out / f"{stem}_summary.csv"))
    for r in summary.itertuples(index=False):
        kind = "observed" if r.observed else "unobserved"
        print(f"{model} {kind}: mean nmse={r.nmse:.3f} mean jll={r.jll:.3f}")
    return table, summary


def _parse_sweep(text):
    m = re.fullmatch(r"\s*(\d+)\s*\.\.\s*(\d+)\s*", text or "")
    if not m or int(m.group(1)) > int(m.group(2)):
        raise ConfigError(f"--knot-sweep expects A..B with A <= B, got {text!r}")
    return int(m.group(1)), int(m.group(2))


def knot_sweep(cfg: RunConfig, k_range, features=None):
    """Refit NP on one turbine for each interior-knot count; NMSE/JLL per count."""
    ks = cfg.knot_sweep
    feats = _read_features(cfg.out / "features.csv") if features is None else features
    layout = cfg.farm_layout()
    tid = ks.get("turbine") or layout.training_ids[0]
    rows = feats[feats["turbine_id"] == tid]
    if rows.empty:
        raise PipelineError(f"no feature rows for turbine {tid}")
    pc = cfg.pipeline_config()
    train, test = train_test_split(rows, int(ks["train_rows"]), int(ks["test_rows"]),
                                   pc.yaw_bins, pc.power_bins, seed=cfg.seed)
    sampler = cfg.sampler_config(ks.get("sampler"))
    base = cfg.spline_config()
    lay = layout.with_training([tid])
    out = []
    for k in range(k_range[0], k_range[1] + 1):
        spline = SplineConfig(order=base.order, interior_knots=k, domain=base.domain)
        spec = ModelSpec(Variant.NP, spline=spline, layout=lay,
                         prior_scale=cfg.model.get("prior_scale", 3.0))
        draws = fit(spec, train, sampler)
        eta, zeta = coefficient_draws(draws, tid)
        ys = squeeze_boundary(test["target_power"].to_numpy(dtype=float))
        mu, phi = predictive_draws(eta, zeta, design_for(test, spline))
        out.append({"interior_knots": k, "basis_per_feature": spline.basis_per_feature,
                    "nmse": nmse(ys, mu.mean(axis=0)), "jll": jll(ys, mu, phi),
                    "max_rhat": draws.diagnostics.max_rhat})
        print(f"knots={k} nmse={out[-1]['nmse']:.3f} jll={out[-1]['jll']:.2f} "
              f"max_rhat={out[-1]['max_rhat']:.4f}")
    return pd.DataFrame(out)


def cmd_diagnose(cfg: RunConfig, sweep=None):
    """Print the R-hat/ESS table of a fit; optionally run the knot sweep."""
    fits = _load_fit(cfg)
    items = fits.items() if isinstance(fits, dict) else [(None, fits)]
    frames = []
    for tid, draws in items:
        diag = ChainDiagnostics.from_draws(draws.draws, names=draws.names())
        df = diag.to_frame()
        if tid is not None:
            df.insert(0, "turbine_id", tid)
        frames.append(df)
        label = cfg.variant.value if tid is None else f"NP {tid}"
        print(f"{label}: {diag.summary_line()}")
    table = pd.concat(frames, ignore_index=True)
    with pd.option_context("display.max_rows", 40, "display.width", 120):
        print(table.to_string(index=False, max_rows=40, float_format=lambda v: f"{v:.4f}"))
    print(f"max_rhat={np.nanmax(table['rhat'].to_numpy()):.4f} "
          f"min_ess_bulk={np.nanmin(table['ess_bulk'].to_numpy()):.1f}")
    sweep_df = None
    if sweep is not None:
        sweep_df = knot_sweep(cfg, _parse_sweep(sweep))
    with _outputs() as outs:
        _write_csv(table, outs(cfg.out / f"diagnostics_{cfg.variant.value.lower()}.csv"))
        if sweep_df is not None:
            _write_csv(sweep_df, outs(cfg.out / "knot_sweep.csv"))
    return table, sweep_df


# -- entry point ----------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="windmeta", description="Spatial beta-regression power curves for wind farms.")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        p = sub.add_parser(verb, help=globals()[f"cmd_{verb}"].__doc__.splitlines()[0])
        p.add_argument("--config", type=Path, default=None, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--variant", choices=["np", "cp", "pp", "meta"], default=None)
        p.add_argument("--output-dir", default=None, help="override output_dir")
        if verb == "fit":
            p.add_argument("--allow-unconverged", action="store_true",
                           help="write draws even if R-hat > 1.01 or ESS < 400")
        if verb == "diagnose":
            p.add_argument("--knot-sweep", metavar="A..B", default=None,
                           help="refit NP on one turbine for interior knots A..B")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, {"seed": args.seed, "variant": args.variant,
                                        "output_dir": args.output_dir})
        cfg.out.mkdir(parents=True, exist_ok=True)
        if args.verb == "fit":
            cmd_fit(cfg, allow_unconverged=args.allow_unconverged)
        elif args.verb == "diagnose":
            if args.knot_sweep is not None:
                _parse_sweep(args.knot_sweep)
            cmd_diagnose(cfg, sweep=args.knot_sweep)
        else:
            globals()[f"cmd_{args.verb}"](cfg)
    except UnconvergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, PipelineError, ModelError, SamplerError, SplineConfigError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
