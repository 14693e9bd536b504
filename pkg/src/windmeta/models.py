"""No-pooling, complete-pooling, partial-pooling and spatial metamodel variants.

Every variant maps a flat unconstrained parameter vector to per-turbine
coefficient vectors ``eta_t`` (mean) and ``zeta_t`` (precision) and scores
them with the beta regression likelihood plus Gaussian priors.

Parameter packing (B = design width, T = training turbines):

* NP   -- ``eta (T, B)``, ``zeta (T, B)``
* CP   -- ``eta (B,)``, ``zeta (B,)``
* PP   -- ``mu_eta (B,)``, ``log_sigma_eta ()``, ``mu_zeta (B,)``,
  ``log_sigma_zeta ()``, ``eps_eta (T, B)``, ``eps_zeta (T, B)`` with
  ``eta_t = mu_eta + sigma_eta * eps_eta[t]`` (non-centred); with
  ``pp_centered`` the ``eps`` spans are replaced by ``eta (T, B)`` and
  ``zeta (T, B)`` themselves. Both forms define the same posterior.
* META -- ``M_eta_x, M_eta_y, M_zeta_x, M_zeta_y`` each ``(2, B)`` with
  ``eta_t = [1, x_t] @ M_eta_x + [1, y_t] @ M_eta_y``
"""

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .beta_glm import _blocks_kernel, _check_y
from .draws import PosteriorDraws
from .special import expit
from .splines import DEFAULT_SPLINE, SplineConfig

__all__ = [
    "Variant",
    "Turbine",
    "FarmLayout",
    "ModelSpec",
    "TurbineData",
    "FarmPosterior",
    "param_layout",
    "param_count",
    "pack",
    "unpack",
    "log_posterior",
    "grad_log_posterior",
    "metamodel_predict_coeffs",
    "coefficient_draws",
    "predict_power",
    "Prediction",
    "ModelError",
]

LOG_2PI = math.log(2.0 * math.pi)


class ModelError(ValueError):
    pass


class Variant(str, enum.Enum):
    NP = "NP"
    CP = "CP"
    PP = "PP"
    META = "META"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        return cls(str(value).upper())


@dataclass(frozen=True)
class Turbine:
    id: str
    x: float
    y: float
    is_training: bool = False


@dataclass(frozen=True)
class FarmLayout:
    """Turbine coordinates normalised to the unit square."""

    turbines: tuple

    def __post_init__(self):
        ts = tuple(self.turbines)
        object.__setattr__(self, "turbines", ts)
        ids = [t.id for t in ts]
        if len(set(ids)) != len(ids):
            raise ModelError("turbine ids must be unique")
        for t in ts:
            if not (0.0 <= t.x <= 1.0 and 0.0 <= t.y <= 1.0):
                raise ModelError(f"turbine {t.id} has coordinates outside [0, 1]")

    def __len__(self):
        return len(self.turbines)

    @property
    def ids(self):
        return [t.id for t in self.turbines]

    @property
    def training_ids(self):
        return [t.id for t in self.turbines if t.is_training]

    def __getitem__(self, turbine_id):
        for t in self.turbines:
            if t.id == turbine_id:
                return t
        raise KeyError(turbine_id)

    def coords(self, ids=None):
        ids = self.ids if ids is None else ids
        return np.array([[self[i].x, self[i].y] for i in ids], dtype=float)

    def with_training(self, ids):
        ids = set(ids)
        unknown = ids - set(self.ids)
        if unknown:
            raise ModelError(f"unknown turbines {sorted(unknown)}")
        return FarmLayout(tuple(replace(t, is_training=t.id in ids) for t in self.turbines))

    def every_kth_training(self, k=4, offset=0):
        return self.with_training(self.ids[offset::k])

    def to_frame(self):
        return pd.DataFrame({
            "turbine_id": self.ids,
            "x": [t.x for t in self.turbines],
            "y": [t.y for t in self.turbines],
            "is_training": [int(t.is_training) for t in self.turbines],
        })

    @classmethod
    def from_frame(cls, df):
        return cls(tuple(Turbine(str(r.turbine_id), float(r.x), float(r.y), bool(r.is_training))
                         for r in df.itertuples(index=False)))

    def to_dict(self):
        return {"turbines": [[t.id, t.x, t.y, bool(t.is_training)] for t in self.turbines]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(Turbine(str(i), float(x), float(y), bool(tr))
                         for i, x, y, tr in d["turbines"]))


@dataclass(frozen=True)
class ModelSpec:
    variant: Variant
    spline: SplineConfig = DEFAULT_SPLINE
    layout: Optional[FarmLayout] = None
    prior_scale: float = 3.0
    pp_sigma_scale: float = 1.0
    n_features: int = 3
    pp_centered: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        if not self.prior_scale > 0 or not self.pp_sigma_scale > 0:
            raise ModelError("prior scales must be positive")
        if self.variant is not Variant.CP:
            if self.layout is None:
                raise ModelError(f"{self.variant.value} needs a farm layout")
            if not self.layout.training_ids:
                raise ModelError("layout has no training turbines")

    @property
    def width(self):
        return self.n_features * self.spline.basis_per_feature

    @property
    def n_training(self):
        return len(self.layout.training_ids) if self.layout is not None else 1

    @property
    def training_ids(self):
        return self.layout.training_ids if self.layout is not None else []

    def to_dict(self):
        return {
            "variant": self.variant.value,
            "spline": self.spline.to_dict(),
            "layout": self.layout.to_dict() if self.layout is not None else None,
            "prior_scale": self.prior_scale,
            "pp_sigma_scale": self.pp_sigma_scale,
            "pp_centered": self.pp_centered,
            "n_features": self.n_features,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            variant=Variant.parse(d["variant"]),
            spline=SplineConfig.from_dict(d["spline"]),
            layout=FarmLayout.from_dict(d["layout"]) if d.get("layout") else None,
            prior_scale=float(d.get("prior_scale", 3.0)),
            pp_sigma_scale=float(d.get("pp_sigma_scale", 1.0)),
            pp_centered=bool(d.get("pp_centered", False)),
            n_features=int(d.get("n_features", 3)),
        )


def param_layout(spec: ModelSpec, n_training=None):
    """Ordered ``name -> (start, shape)`` map of the packed vector."""
    b = spec.width
    t = spec.n_training if n_training is None else n_training
    v = spec.variant
    if v is Variant.NP:
        shapes = [("eta", (t, b)), ("zeta", (t, b))]
    elif v is Variant.CP:
        shapes = [("eta", (b,)), ("zeta", (b,))]
    elif v is Variant.PP:
        shapes = [("mu_eta", (b,)), ("log_sigma_eta", ()), ("mu_zeta", (b,)),
                  ("log_sigma_zeta", ()), ("eps_eta", (t, b)), ("eps_zeta", (t, b))]
        if spec.pp_centered:
            shapes[4:] = [("eta", (t, b)), ("zeta", (t, b))]
    else:
        shapes = [("M_eta_x", (2, b)), ("M_eta_y", (2, b)),
                  ("M_zeta_x", (2, b)), ("M_zeta_y", (2, b))]
    out = {}
    start = 0
    for name, shape in shapes:
        out[name] = (start, shape)
        start += int(np.prod(shape))
    return out


def param_count(spec: ModelSpec, n_training=None) -> int:
    """NP: 2BT, CP: 2B, PP: 2BT + 2B + 2, META: 8B."""
    return sum(int(np.prod(s)) for _, s in param_layout(spec, n_training).values())


def unpack(spec: ModelSpec, theta, n_training=None):
    theta = np.asarray(theta, dtype=float)
    lay = param_layout(spec, n_training)
    n = sum(int(np.prod(s)) for _, s in lay.values())
    if theta.shape != (n,):
        raise ModelError(f"expected {n} parameters, got shape {theta.shape}")
    out = {}
    for name, (start, shape) in lay.items():
        size = int(np.prod(shape))
        block = theta[start:start + size]
        out[name] = float(block[0]) if shape == () else block.reshape(shape)
    return out


def pack(spec: ModelSpec, params: Mapping, n_training=None):
    lay = param_layout(spec, n_training)
    parts = []
    for name, (_, shape) in lay.items():
        arr = np.asarray(params[name], dtype=float)
        if arr.shape != shape:
            raise ModelError(f"{name}: expected shape {shape}, got {arr.shape}")
        parts.append(arr.ravel())
    return np.concatenate(parts) if parts else np.zeros(0)


@dataclass
class TurbineData:
    turbine_id: str
    y: np.ndarray
    X: np.ndarray


def _normal_logpdf_sum(x, scale):
    x = np.asarray(x)
    return float(-0.5 * np.sum((x / scale) ** 2) - x.size * (0.5 * LOG_2PI + math.log(scale)))


class FarmPosterior:
    """Log posterior of one model variant bound to its training data.

    Parameters
    ----------
    spec : ModelSpec
    data : mapping of turbine id -> (y, X), or sequence of TurbineData
        Must cover exactly the training turbines of ``spec.layout`` (CP
        accepts any set of blocks and pools them).
    """

    def __init__(self, spec: ModelSpec, data):
        self.spec = spec
        if isinstance(data, Mapping):
            blocks = [TurbineData(k, *v) for k, v in data.items()]
        else:
            blocks = list(data)
        b = spec.width
        if spec.variant is Variant.CP:
            ids = [blk.turbine_id for blk in blocks]
        else:
            ids = spec.training_ids
            given = {blk.turbine_id for blk in blocks}
            if given != set(ids):
                raise ModelError(
                    f"data blocks {sorted(given)} do not match training turbines {sorted(ids)}")
            by_id = {blk.turbine_id: blk for blk in blocks}
            blocks = [by_id[i] for i in ids]
        self.turbine_ids = ids
        ys, xs, sizes = [], [], []
        for blk in blocks:
            y = _check_y(blk.y) if len(blk.y) else np.zeros(0)
            X = np.asarray(getattr(blk.X, "values", blk.X), dtype=float).reshape(-1, b)
            if X.shape[0] != y.shape[0]:
                raise ModelError(f"turbine {blk.turbine_id}: {y.shape[0]} targets, {X.shape[0]} rows")
            ys.append(y)
            xs.append(X)
            sizes.append(y.shape[0])
        self.y = np.concatenate(ys) if ys else np.zeros(0)
        self.X = np.ascontiguousarray(np.vstack(xs)) if xs else np.zeros((0, b))
        self.sizes = np.array(sizes, dtype=int)
        self.row_block = np.zeros(len(self.y), dtype=np.int64)
        if spec.variant is not Variant.CP:
            self.row_block = np.repeat(np.arange(len(sizes)), self.sizes).astype(np.int64)
        self.layout = param_layout(spec)
        self._slices = [(name, slice(start, start + int(np.prod(shape))), shape)
                        for name, (start, shape) in self.layout.items()]
        self.dim = param_count(spec)
        if spec.variant is Variant.META:
            self.coords = spec.layout.coords(ids)
            self.cx = np.column_stack((np.ones(len(ids)), self.coords[:, 0]))
            self.cy = np.column_stack((np.ones(len(ids)), self.coords[:, 1]))

    def _unpack(self, theta):
        p = {}
        for name, sl, shape in self._slices:
            p[name] = theta[sl][0] if shape == () else theta[sl].reshape(shape)
        return p

    def _pack(self, grads):
        out = np.empty(self.dim)
        for name, sl, _ in self._slices:
            out[sl] = np.ravel(grads[name])
        return out

    # -- coefficient maps -------------------------------------------------

    def turbine_coefficients(self, theta, p=None):
        """Per-turbine ``(eta, zeta)``, each ``(T, B)`` (``(1, B)`` for CP)."""
        p = self._unpack(np.asarray(theta, dtype=float)) if p is None else p
        v = self.spec.variant
        if v is Variant.NP:
            return p["eta"], p["zeta"]
        if v is Variant.CP:
            return p["eta"][None, :], p["zeta"][None, :]
        if v is Variant.PP and self.spec.pp_centered:
            return p["eta"], p["zeta"]
        if v is Variant.PP:
            se, sz = math.exp(p["log_sigma_eta"]), math.exp(p["log_sigma_zeta"])
            return p["mu_eta"] + se * p["eps_eta"], p["mu_zeta"] + sz * p["eps_zeta"]
        eta = self.cx @ p["M_eta_x"] + self.cy @ p["M_eta_y"]
        zeta = self.cx @ p["M_zeta_x"] + self.cy @ p["M_zeta_y"]
        return eta, zeta

    def _likelihood(self, eta, zeta, want_grad):
        eta = np.ascontiguousarray(eta)
        zeta = np.ascontiguousarray(zeta)
        ge = np.empty_like(eta)
        gz = np.empty_like(zeta)
        ll = _blocks_kernel(self.y, self.X, self.row_block, eta, zeta, want_grad, ge, gz)
        return ll, ge, gz

    # -- log density --------------------------------------------------------

    def logp_grad(self, theta, want_grad=True):
        """Log posterior and its gradient; -inf (no exception) when undefined."""
        theta = np.asarray(theta, dtype=float)
        if not np.all(np.isfinite(theta)):
            return -np.inf, np.zeros_like(theta)
        spec = self.spec
        s = spec.prior_scale
        p = self._unpack(theta)
        if spec.variant is Variant.PP and max(p["log_sigma_eta"], p["log_sigma_zeta"]) > 700.0:
            return -np.inf, np.zeros_like(theta)
        eta, zeta = self.turbine_coefficients(theta, p)
        ll, ge, gz = self._likelihood(eta, zeta, want_grad)
        if not np.isfinite(ll):
            return -np.inf, np.zeros_like(theta)
        v = spec.variant
        grads = {}
        if v in (Variant.NP, Variant.CP):
            lp = ll + _normal_logpdf_sum(p["eta"], s) + _normal_logpdf_sum(p["zeta"], s)
            if want_grad:
                grads["eta"] = ge.reshape(p["eta"].shape) - p["eta"] / s**2
                grads["zeta"] = gz.reshape(p["zeta"].shape) - p["zeta"] / s**2
        elif v is Variant.PP:
            h = spec.pp_sigma_scale
            lp = ll
            for tag, g in (("eta", ge), ("zeta", gz)):
                mu, ls = p[f"mu_{tag}"], p[f"log_sigma_{tag}"]
                sig = math.exp(ls)
                # half-normal on sigma, plus log-Jacobian of sigma = exp(log_sigma)
                lp += (_normal_logpdf_sum(mu, s) + math.log(2.0) - 0.5 * LOG_2PI
                       - math.log(h) - 0.5 * (sig / h) ** 2 + ls)
                if spec.pp_centered:
                    coef = p[tag]
                    r = (coef - mu) / sig
                    lp += _normal_logpdf_sum(r, 1.0) - r.size * ls
                    if want_grad:
                        grads[tag] = g - r / sig
                        grads[f"mu_{tag}"] = r.sum(axis=0) / sig - mu / s**2
                        grads[f"log_sigma_{tag}"] = float(np.sum(r * r)) - r.size - (sig / h) ** 2 + 1.0
                else:
                    eps = p[f"eps_{tag}"]
                    lp += _normal_logpdf_sum(eps, 1.0)
                    if want_grad:
                        grads[f"mu_{tag}"] = g.sum(axis=0) - mu / s**2
                        grads[f"eps_{tag}"] = sig * g - eps
                        grads[f"log_sigma_{tag}"] = sig * float(np.sum(g * eps)) - (sig / h) ** 2 + 1.0
        else:
            lp = ll
            for name in ("M_eta_x", "M_eta_y", "M_zeta_x", "M_zeta_y"):
                lp += _normal_logpdf_sum(p[name], s)
            if want_grad:
                grads["M_eta_x"] = self.cx.T @ ge - p["M_eta_x"] / s**2
                grads["M_eta_y"] = self.cy.T @ ge - p["M_eta_y"] / s**2
                grads["M_zeta_x"] = self.cx.T @ gz - p["M_zeta_x"] / s**2
                grads["M_zeta_y"] = self.cy.T @ gz - p["M_zeta_y"] / s**2
        if not want_grad:
            return lp, None
        return lp, self._pack(grads)

    def log_density(self, theta):
        return self.logp_grad(theta, want_grad=False)[0]

    def log_posterior(self, theta):
        lp, _ = self.logp_grad(theta, want_grad=False)
        if not np.isfinite(lp):
            raise FloatingPointError(f"non-finite log posterior; check span {self._blame(theta)!r}")
        return lp

    def grad_log_posterior(self, theta):
        lp, g = self.logp_grad(theta)
        if not np.isfinite(lp):
            raise FloatingPointError(f"non-finite log posterior; check span {self._blame(theta)!r}")
        return g

    def _blame(self, theta):
        theta = np.asarray(theta, dtype=float)
        for name, (start, shape) in self.layout.items():
            if not np.all(np.isfinite(theta[start:start + int(np.prod(shape))])):
                return name
        _, zeta = self.turbine_coefficients(theta)
        zeta_spans = [n for n in self.layout if "zeta" in n]
        if self.y.size and np.max(np.abs(self.X @ zeta.T)) > 700:
            return zeta_spans[0]
        return next(iter(self.layout))


def log_posterior(spec, data, theta):
    """Unnormalised log posterior of ``theta`` for the given variant."""
    return FarmPosterior(spec, data).log_posterior(theta)


def grad_log_posterior(spec, data, theta):
    return FarmPosterior(spec, data).grad_log_posterior(theta)


# -- prediction --------------------------------------------------------------


def _require_spec(draws):
    if draws.spec is None:
        raise ModelError("draws carry no model specification")
    return draws.spec


def metamodel_predict_coeffs(draws: PosteriorDraws, coords):
    """Coefficients at arbitrary normalised locations from a metamodel fit.

    Returns ``(eta, zeta)``, each of shape ``(draws, locations, B)``.
    """
    spec = _require_spec(draws)
    if spec.variant is not Variant.META:
        raise ModelError(f"coordinate prediction needs a META fit, got {spec.variant.value}")
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    cx = np.column_stack((np.ones(len(coords)), coords[:, 0]))
    cy = np.column_stack((np.ones(len(coords)), coords[:, 1]))
    eta = (np.einsum("lk,skb->slb", cx, draws.get("M_eta_x"))
           + np.einsum("lk,skb->slb", cy, draws.get("M_eta_y")))
    zeta = (np.einsum("lk,skb->slb", cx, draws.get("M_zeta_x"))
            + np.einsum("lk,skb->slb", cy, draws.get("M_zeta_y")))
    return eta, zeta


def coefficient_draws(draws: PosteriorDraws, turbine_id=None, coords=None, rng=None):
    """Per-draw ``(eta, zeta)``, each ``(S, B)``, for one turbine or location.

    * CP uses the shared coefficients everywhere.
    * NP needs the turbine to have been fitted.
    * PP uses the turbine's own coefficients when it was observed, otherwise
      a fresh population draw ``mu + sigma * z`` per posterior draw.
    * META evaluates the spatial map at the turbine (or given) coordinates.
    """
    spec = _require_spec(draws)
    v = spec.variant
    if v is Variant.CP:
        return draws.get("eta"), draws.get("zeta")
    if v is Variant.META:
        if coords is None:
            t = spec.layout[turbine_id]
            coords = (t.x, t.y)
        eta, zeta = metamodel_predict_coeffs(draws, [coords])
        return eta[:, 0, :], zeta[:, 0, :]
    ids = draws.extra.get("turbine_ids", spec.training_ids)
    if v is Variant.NP:
        if turbine_id not in ids:
            raise ModelError(f"turbine {turbine_id!r} was not fitted by this NP model")
        k = ids.index(turbine_id)
        return draws.get("eta")[:, k, :], draws.get("zeta")[:, k, :]
    # PP
    out = []
    for tag in ("eta", "zeta"):
        mu = draws.get(f"mu_{tag}")
        sig = np.exp(draws.get(f"log_sigma_{tag}"))[:, None]
        if turbine_id in ids:
            k = ids.index(turbine_id)
            if spec.pp_centered:
                out.append(draws.get(tag)[:, k, :])
            else:
                out.append(mu + sig * draws.get(f"eps_{tag}")[:, k, :])
        else:
            if rng is None:
                raise ModelError("predicting an unobserved turbine with PP needs an rng")
            out.append(mu + sig * rng.standard_normal(mu.shape))
    return out[0], out[1]


@dataclass
class Prediction:
    mean: np.ndarray
    quantiles: np.ndarray
    levels: tuple


def predict_power(eta_draws, zeta_draws, X_new, quantiles=(0.025, 0.975), rng=None,
                  samples_per_draw=1, chunk=2048):
    """Posterior-predictive mean and quantiles of normalised power.

    The mean averages ``expit(X @ eta_s)`` over draws. Quantiles come from
    the beta mixture over draws, estimated with ``samples_per_draw``
    simulated targets per posterior draw.
    """
    eta_draws = np.atleast_2d(np.asarray(eta_draws, dtype=float))
    zeta_draws = np.atleast_2d(np.asarray(zeta_draws, dtype=float))
    if eta_draws.shape[0] == 0:
        raise ModelError("no posterior draws")
    levels = tuple(float(q) for q in quantiles)
    if any(not 0.0 < q < 1.0 for q in levels):
        raise ModelError("quantiles must lie in (0, 1)")
    rng = np.random.default_rng() if rng is None else rng
    X = np.asarray(getattr(X_new, "values", X_new), dtype=float)
    n = X.shape[0]
    mean = np.empty(n)
    qs = np.empty((n, len(levels)))
    for lo in range(0, n, chunk):
        Xc = X[lo:lo + chunk]
        mu = expit(Xc @ eta_draws.T)          # (n, S)
        phi = np.exp(np.minimum(Xc @ zeta_draws.T, 700.0))
        mean[lo:lo + chunk] = mu.mean(axis=1)
        a = np.repeat(mu * phi, samples_per_draw, axis=1)
        b = np.repeat((1.0 - mu) * phi, samples_per_draw, axis=1)
        ysim = rng.beta(a, b)
        qs[lo:lo + chunk] = np.quantile(ysim, levels, axis=1).T
    return Prediction(mean=mean, quantiles=qs, levels=levels)
