"""Posterior draw container with named parameter spans and CSV round-trip."""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import pandas as pd

__all__ = ["PosteriorDraws", "flat_names"]


def flat_names(index_map):
    """Column names ``name[i,j]`` for every scalar in an index map."""
    names = []
    for name, (_, shape) in index_map.items():
        if len(shape) == 0:
            names.append(name)
        else:
            for idx in np.ndindex(*shape):
                names.append(f"{name}[{','.join(map(str, idx))}]")
    return names


@dataclass
class PosteriorDraws:
    """Post-warmup draws, shape ``(chains, samples, params)``.

    ``index_map`` maps a parameter name to ``(start, shape)`` within the flat
    parameter vector. ``spec`` is the model specification (if any) and
    ``diagnostics`` holds sampler statistics.
    """

    draws: np.ndarray
    index_map: dict
    spec: Optional[Any] = None
    diagnostics: Optional[Any] = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=np.float64)
        if self.draws.ndim != 3:
            raise ValueError(f"draws must be (chains, samples, params), got {self.draws.shape}")
        size = sum(int(np.prod(s)) for _, s in self.index_map.values())
        if size != self.draws.shape[2]:
            raise ValueError(f"index map covers {size} params, draws have {self.draws.shape[2]}")

    @property
    def n_chains(self):
        return self.draws.shape[0]

    @property
    def n_samples(self):
        return self.draws.shape[1]

    @property
    def n_params(self):
        return self.draws.shape[2]

    def names(self):
        return flat_names(self.index_map)

    def flat(self):
        """All draws pooled over chains, shape ``(chains * samples, params)``."""
        return self.draws.reshape(-1, self.n_params)

    def get(self, name, pooled=True):
        """Draws of one named span, reshaped to its parameter shape."""
        start, shape = self.index_map[name]
        size = int(np.prod(shape))
        block = self.draws[:, :, start:start + size]
        block = block.reshape(self.n_chains, self.n_samples, *shape)
        if pooled:
            return block.reshape(self.n_chains * self.n_samples, *shape)
        return block

    def to_frame(self):
        c, s, p = self.draws.shape
        df = pd.DataFrame(self.draws.reshape(c * s, p), columns=self.names())
        df.insert(0, "draw", np.tile(np.arange(s), c))
        df.insert(0, "chain", np.repeat(np.arange(c), s))
        return df

    def metadata(self):
        meta = {
            "index_map": {k: [int(v[0]), [int(d) for d in v[1]]]
                          for k, v in self.index_map.items()},
            "chains": int(self.n_chains),
            "samples": int(self.n_samples),
            "spec": self.spec.to_dict() if self.spec is not None else None,
            "extra": self.extra,
        }
        if self.diagnostics is not None:
            meta["diagnostics"] = self.diagnostics.summary()
        return meta

    def to_csv(self, path):
        """Write the columnar CSV and a ``.json`` sidecar next to it."""
        path = Path(path)
        self.to_frame().to_csv(path, index=False)
        with open(path.with_suffix(".json"), "w") as fh:
            json.dump(self.metadata(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_csv(cls, path):
        path = Path(path)
        with open(path.with_suffix(".json")) as fh:
            meta = json.load(fh)
        index_map = {k: (int(v[0]), tuple(v[1])) for k, v in meta["index_map"].items()}
        # keep the json key order, which is the packing order
        index_map = dict(sorted(index_map.items(), key=lambda kv: kv[1][0]))
        df = pd.read_csv(path, float_precision="round_trip")
        c, s = meta["chains"], meta["samples"]
        values = df.drop(columns=["chain", "draw"]).to_numpy(dtype=np.float64)
        draws = values.reshape(c, s, -1)
        spec = None
        if meta.get("spec") is not None:
            from .models import ModelSpec
            spec = ModelSpec.from_dict(meta["spec"])
        return cls(draws=draws, index_map=index_map, spec=spec,
                   extra=meta.get("extra", {}))
