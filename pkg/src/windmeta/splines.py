"""Clamped B-spline bases and the stacked multi-feature design matrix."""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd

__all__ = [
    "SplineConfig",
    "SplineConfigError",
    "SplineDomainError",
    "KnotVector",
    "DesignMatrix",
    "DEFAULT_SPLINE",
    "FOUR_KNOT_SPLINE",
    "make_knots",
    "basis_eval",
    "design_matrix",
]


class SplineConfigError(ValueError):
    pass


class SplineDomainError(ValueError):
    pass


@dataclass(frozen=True)
class SplineConfig:
    """B-spline settings shared by every input feature.

    ``basis_per_feature`` and ``interior_knots`` are tied by the clamped
    construction (``basis = interior + order``); give either one and the
    other is derived.
    """

    order: int = 4
    interior_knots: Optional[int] = None
    basis_per_feature: Optional[int] = None
    domain: tuple = (0.0, 1.0)

    def __post_init__(self):
        if self.order < 2:
            raise SplineConfigError(f"order must be >= 2, got {self.order}")
        k, nb = self.interior_knots, self.basis_per_feature
        if k is None and nb is None:
            k = 2
        if k is None:
            k = nb - self.order
        if nb is None:
            nb = k + self.order
        if k < 0:
            raise SplineConfigError(
                f"basis_per_feature={nb} is smaller than order={self.order}")
        if nb != k + self.order:
            raise SplineConfigError(
                f"basis_per_feature={nb} inconsistent with "
                f"{k} interior knots of order {self.order} (expected {k + self.order})")
        lo, hi = map(float, self.domain)
        if not hi > lo:
            raise SplineConfigError(f"empty domain {self.domain}")
        object.__setattr__(self, "interior_knots", int(k))
        object.__setattr__(self, "basis_per_feature", int(nb))
        object.__setattr__(self, "domain", (lo, hi))

    def to_dict(self):
        return {"order": self.order, "interior_knots": self.interior_knots,
                "basis_per_feature": self.basis_per_feature,
                "domain": list(self.domain)}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "domain" in d:
            d["domain"] = tuple(d["domain"])
        return cls(**d)


# Six cubic bases per feature gives B = 18 for three features.
DEFAULT_SPLINE = SplineConfig(order=4, interior_knots=2)
# Four interior knots: eight bases per feature, B = 24.
FOUR_KNOT_SPLINE = SplineConfig(order=4, interior_knots=4)


@dataclass(frozen=True)
class KnotVector:
    knots: np.ndarray
    order: int

    @property
    def n_basis(self):
        return len(self.knots) - self.order

    @property
    def domain(self):
        return float(self.knots[0]), float(self.knots[-1])


def make_knots(config: SplineConfig) -> KnotVector:
    """Clamped knot vector with uniformly spaced interior knots."""
    lo, hi = config.domain
    interior = np.linspace(lo, hi, config.interior_knots + 2)[1:-1]
    knots = np.concatenate((np.full(config.order, lo), interior,
                            np.full(config.order, hi)))
    knots.setflags(write=False)
    return KnotVector(knots=knots, order=config.order)


def _basis_matrix(knots: KnotVector, x: np.ndarray) -> np.ndarray:
    t = knots.knots
    k = knots.order
    n_basis = knots.n_basis
    lo, hi = knots.domain
    x = np.asarray(x, dtype=np.float64)

    # span index i such that t[i] <= x < t[i+1]; right endpoint goes to the
    # last non-empty span so the final basis function evaluates to 1 there
    span = np.searchsorted(t, x, side="right") - 1
    span = np.clip(span, k - 1, n_basis - 1)

    # de Boor's triangular evaluation of the k nonzero bases on each span
    n = x.shape[0]
    vals = np.zeros((n, k))
    vals[:, 0] = 1.0
    left = np.empty((n, k))
    right = np.empty((n, k))
    for j in range(1, k):
        left[:, j] = x - t[span + 1 - j]
        right[:, j] = t[span + j] - x
        saved = np.zeros(n)
        for r in range(j):
            denom = right[:, r + 1] + left[:, j - r]
            temp = vals[:, r] / denom
            vals[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        vals[:, j] = saved

    out = np.zeros((n, n_basis))
    cols = span[:, None] - (k - 1) + np.arange(k)[None, :]
    np.put_along_axis(out, cols, vals, axis=1)
    # exact clamping at the ends
    out[x == lo] = 0.0
    out[x == lo, 0] = 1.0
    out[x == hi] = 0.0
    out[x == hi, -1] = 1.0
    return out


def basis_eval(knots: KnotVector, x):
    """Evaluate every basis function at ``x`` (scalar or 1-d array).

    Returns a vector of length ``n_basis`` for scalar input and an
    ``(len(x), n_basis)`` matrix otherwise. Points outside the knot domain
    raise :class:`SplineDomainError`; nothing is extrapolated.
    """
    arr = np.asarray(x, dtype=np.float64)
    flat = arr.reshape(-1)
    lo, hi = knots.domain
    bad = ~((flat >= lo) & (flat <= hi))
    if np.any(bad):
        raise SplineDomainError(
            f"{int(bad.sum())} value(s) outside [{lo}, {hi}], "
            f"first {flat[bad][0]!r}")
    out = _basis_matrix(knots, flat)
    return out[0] if arr.ndim == 0 else out


@dataclass(frozen=True)
class DesignMatrix:
    """N x B spline design matrix with one column block per input feature."""

    values: np.ndarray
    feature_blocks: tuple

    @property
    def shape(self):
        return self.values.shape

    @property
    def n_rows(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def column_names(self):
        names = []
        for f, (_, w) in enumerate(self.feature_blocks):
            names.extend(f"f{f}_b{b}" for b in range(w))
        return names

    def to_frame(self):
        return pd.DataFrame(self.values, columns=self.column_names())

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False)


def design_matrix(features, config: SplineConfig = DEFAULT_SPLINE) -> DesignMatrix:
    """Stack per-feature basis evaluations into a design matrix.

    Parameters
    ----------
    features : array_like, shape (N, F)
        Scaled features, each column inside ``config.domain``. The usual
        layout is (freestream, sin-yaw, cos-yaw).
    config : SplineConfig

    Returns
    -------
    DesignMatrix
        Width ``F * config.basis_per_feature``.
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim == 1:
        feats = feats.reshape(-1, 1) if feats.size == 0 else feats[None, :]
    if feats.ndim != 2:
        raise ValueError(f"features must be 2-d, got shape {feats.shape}")
    n, n_feat = feats.shape
    if n_feat == 0 and n == 0:
        n_feat = 3
        feats = feats.reshape(0, 3)
    lo, hi = config.domain
    bad = ~np.all((feats >= lo) & (feats <= hi), axis=1)
    if np.any(bad):
        rows = np.flatnonzero(bad)
        shown = ", ".join(map(str, rows[:10])) + (" ..." if rows.size > 10 else "")
        raise SplineDomainError(
            f"{rows.size} row(s) with features outside [{lo}, {hi}]: rows {shown}")
    knots = make_knots(config)
    nb = config.basis_per_feature
    values = np.empty((n, n_feat * nb))
    blocks = []
    for f in range(n_feat):
        values[:, f * nb:(f + 1) * nb] = _basis_matrix(knots, feats[:, f]) if n else 0.0
        blocks.append((f * nb, nb))
    return DesignMatrix(values=values, feature_blocks=tuple(blocks))
