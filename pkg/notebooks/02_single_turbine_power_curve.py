# %% [markdown]
# # Beta-regression power curve for one turbine
#
# Fit the no-pooling model to one turbine with the native NUTS sampler,
# look at the predictive envelope and sweep the number of interior knots.

# %%
import numpy as np
import pandas as pd

from windmeta.metrics import nmse
from windmeta.models import ModelSpec, Variant, coefficient_draws, predict_power
from windmeta.nuts import SamplerConfig
from windmeta.scada import run_pipeline, train_test_split
from windmeta.splines import SplineConfig
from windmeta.synthfarm import generate_layout, simulate
from windmeta.workflow import design_for, fit

layout = generate_layout(4, 5).every_kth_training(4)
records, _ = simulate(layout, n_timestamps=4000, seed=2)
feats, _, scaling = run_pipeline(records, layout.training_ids)
tid = layout.training_ids[2]
rows = feats[feats["turbine_id"] == tid]
train, test = train_test_split(rows, 1000, 500, seed=2)
print(tid, len(train), len(test))

# %%
sampler = SamplerConfig(chains=4, warmup=500, draws=500, seed=2, metric="dense")
spec = ModelSpec(Variant.NP, layout=layout.with_training([tid]))
draws = fit(spec, train, sampler)
print(draws.diagnostics.summary_line())

# %% [markdown]
# Predictive mean and 95% band along the freestream axis under westerly wind.

# %%
eta, zeta = coefficient_draws(draws, tid)
speeds = np.linspace(0, 20, 21)
X = design_for(pd.DataFrame(scaling.features(speeds, 270.0),
                            columns=["freestream", "sin_yaw", "cos_yaw"]), spec.spline)
pred = predict_power(eta, zeta, X, rng=np.random.default_rng(0), samples_per_draw=4)
print(pd.DataFrame({"speed": speeds, "q2.5": pred.quantiles[:, 0], "mean": pred.mean,
                    "q97.5": pred.quantiles[:, 1]}).round(3).to_string(index=False))

# %% [markdown]
# More knots help at first and then stop paying off.

# %%
out = []
for k in range(0, 5):
    s = SplineConfig(order=4, interior_knots=k)
    d = fit(ModelSpec(Variant.NP, spline=s, layout=layout.with_training([tid])), train,
            SamplerConfig(chains=2, warmup=300, draws=300, seed=k, metric="dense"))
    e, _ = coefficient_draws(d, tid)
    mu = 1 / (1 + np.exp(-(e @ design_for(test, s).T)))
    out.append({"interior_knots": k, "nmse": nmse(test["target_power"], mu.mean(0)),
                "max_rhat": d.diagnostics.max_rhat})
print(pd.DataFrame(out).round(3))
