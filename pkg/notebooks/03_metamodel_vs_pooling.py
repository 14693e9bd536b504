# %% [markdown]
# # Spatial metamodel against complete and partial pooling
#
# Five training turbines (every fourth of a 4 x 5 grid) stand in for the
# whole farm. Each model predicts the other fifteen; the metamodel does so
# from turbine coordinates alone.

# %%
import numpy as np
import pandas as pd

from windmeta.models import ModelSpec, Variant, coefficient_draws
from windmeta.nuts import SamplerConfig
from windmeta.scada import run_pipeline, train_test_split
from windmeta.special import expit
from windmeta.synthfarm import WakeConfig, generate_layout, simulate
from windmeta.workflow import design_for, fit, score_turbines

layout = generate_layout(4, 5).every_kth_training(4)
records, truth = simulate(layout, WakeConfig(deficit_strength=0.3), 5000, seed=0)
feats, _, scaling = run_pipeline(records, layout.training_ids)
train, test = train_test_split(feats, 250, 250, seed=0)
train = train[train["turbine_id"].isin(set(layout.training_ids))]

# %%
fits, scores = {}, []
for v in ("CP", "PP", "META"):
    spec = ModelSpec(Variant.parse(v), layout=layout)
    fits[v] = fit(spec, train, SamplerConfig(chains=4, warmup=1000, draws=1000, seed=0,
                                             metric="dense"))
    print(v, fits[v].diagnostics.summary_line())
    rows = score_turbines(fits[v], test, spec.spline, layout, np.random.default_rng(0))
    scores.append(pd.DataFrame([r.__dict__ for r in rows]).assign(model=v))
scores = pd.concat(scores)
print(scores.groupby(["model", "observed"])[["nmse", "jll"]].mean().round(2))

# %% [markdown]
# The x-slope of the metamodel's mean coefficients, per spline column.
# Direction columns (the last twelve) carry the east-west wake pattern.

# %%
m = fits["META"].get("M_eta_x")[:, 1, :]
print(pd.DataFrame({"mean": m.mean(0), "sd": m.std(0)}).round(2).T)

# %% [markdown]
# An east-edge turbine makes more power in easterly wind, when it is upwind,
# than in westerly wind, when it sits behind the farm.

# %%
x, y = layout["T09"].x, layout["T09"].y
eta, _ = coefficient_draws(fits["META"], coords=(x, y))
speeds = np.linspace(0, 20, 11)
table = {}
for direction in (90.0, 180.0, 270.0, 360.0):
    g = pd.DataFrame(scaling.features(speeds, direction),
                     columns=["freestream", "sin_yaw", "cos_yaw"])
    table[direction] = expit(eta @ design_for(g, fits["META"].spec.spline).T).mean(0)
print(pd.DataFrame(table, index=speeds).round(3))
