import csv

import numpy as np
import pytest

from windmeta.draws import PosteriorDraws, flat_names
from windmeta.models import Variant, param_layout

from _helpers import tiny_spec


def test_flat_names():
    assert flat_names({"a": (0, ()), "b": (1, (2, 2))}) == \
        ["a", "b[0,0]", "b[0,1]", "b[1,0]", "b[1,1]"]


def test_get_and_flat(rng):
    d = PosteriorDraws(rng.normal(size=(2, 3, 5)), {"a": (0, ()), "b": (1, (2, 2))})
    assert d.get("b").shape == (6, 2, 2)
    assert d.get("b", pooled=False).shape == (2, 3, 2, 2)
    np.testing.assert_array_equal(d.get("b")[4].ravel(), d.flat()[4, 1:])
    assert d.get("a").shape == (6,)


def test_shape_checks(rng):
    with pytest.raises(ValueError):
        PosteriorDraws(rng.normal(size=(3, 5)), {"a": (0, (5,))})
    with pytest.raises(ValueError):
        PosteriorDraws(rng.normal(size=(1, 3, 5)), {"a": (0, (4,))})


@pytest.mark.parametrize("variant", ["NP", "CP", "PP", "META"])
def test_csv_roundtrip_exact(variant, tmp_path, rng):
    spec = tiny_spec(variant)
    lay = param_layout(spec)
    n = sum(int(np.prod(s)) for _, s in lay.values())
    d = PosteriorDraws(rng.normal(size=(2, 4, n)) * 1e3, lay, spec=spec, extra={"k": 1})
    d.to_csv(tmp_path / "d.csv")
    back = PosteriorDraws.from_csv(tmp_path / "d.csv")
    np.testing.assert_array_equal(back.draws, d.draws)
    assert back.index_map == {k: (v[0], tuple(v[1])) for k, v in lay.items()}
    assert back.spec == spec and back.spec.variant is Variant.parse(variant)
    assert back.extra == {"k": 1}
    with open(tmp_path / "d.csv", newline="") as fh:
        header = next(csv.reader(fh))
    assert header == ["chain", "draw"] + d.names()
