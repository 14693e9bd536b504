import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from windmeta.splines import (DEFAULT_SPLINE, FOUR_KNOT_SPLINE, SplineConfig, SplineConfigError,
                              SplineDomainError, basis_eval, design_matrix, make_knots)

# order 4, four interior knots; reference values from scipy.interpolate.BSpline
SCIPY_BASIS = {
    0.05: [0.421875, 0.49609375, 0.0794270833333333, 0.00260416666666667, 0, 0, 0, 0],
    0.37: [0, 0.000843750000000002, 0.250947916666667, 0.645854166666667,
           0.102354166666667, 0, 0, 0],
    0.5: [0, 0, 0.0208333333333333, 0.479166666666667, 0.479166666666667,
          0.0208333333333333, 0, 0],
    0.93: [0, 0, 0, 0, 0.00714583333333332, 0.144447916666667, 0.57378125, 0.274625],
}


def test_four_interior_knots_vector():
    kv = make_knots(SplineConfig(order=4, interior_knots=4))
    np.testing.assert_allclose(kv.knots, [0, 0, 0, 0, 0.2, 0.4, 0.6, 0.8, 1, 1, 1, 1],
                               atol=1e-15)
    assert kv.n_basis == 8


def test_zero_interior_knots_is_bernstein():
    kv = make_knots(SplineConfig(order=4, interior_knots=0))
    np.testing.assert_array_equal(kv.knots, [0, 0, 0, 0, 1, 1, 1, 1])
    np.testing.assert_allclose(basis_eval(kv, 0.5), [0.125, 0.375, 0.375, 0.125], atol=1e-15)


def test_presets():
    assert DEFAULT_SPLINE.basis_per_feature == 6
    assert DEFAULT_SPLINE.interior_knots == 2
    assert FOUR_KNOT_SPLINE.basis_per_feature == 8


@pytest.mark.parametrize("x", sorted(SCIPY_BASIS))
def test_basis_matches_scipy(x):
    kv = make_knots(FOUR_KNOT_SPLINE)
    np.testing.assert_allclose(basis_eval(kv, x), SCIPY_BASIS[x], atol=1e-14)


def test_config_validation():
    with pytest.raises(SplineConfigError):
        SplineConfig(order=1)
    with pytest.raises(SplineConfigError):
        SplineConfig(order=4, interior_knots=2, basis_per_feature=7)
    with pytest.raises(SplineConfigError):
        SplineConfig(order=4, basis_per_feature=3)
    assert SplineConfig(order=3, basis_per_feature=5).interior_knots == 2
    cfg = SplineConfig(order=4, interior_knots=3, domain=(-1.0, 2.0))
    assert SplineConfig.from_dict(cfg.to_dict()) == cfg


def test_clamped_endpoints():
    kv = make_knots(DEFAULT_SPLINE)
    b0 = basis_eval(kv, 0.0)
    b1 = basis_eval(kv, 1.0)
    assert b0[0] == 1.0 and np.count_nonzero(b0) == 1
    assert b1[-1] == 1.0 and np.count_nonzero(b1) == 1


def test_partition_of_unity_at_037():
    assert basis_eval(make_knots(FOUR_KNOT_SPLINE), 0.37).sum() == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("x", [-1e-9, 1.0 + 1e-9, np.nan, np.inf])
def test_no_extrapolation(x):
    with pytest.raises(SplineDomainError):
        basis_eval(make_knots(DEFAULT_SPLINE), x)


@pytest.mark.parametrize("cfg", [DEFAULT_SPLINE, FOUR_KNOT_SPLINE, SplineConfig(order=3,
                                                                                 interior_knots=5)])
def test_partition_and_local_support_on_random_points(cfg, rng):
    kv = make_knots(cfg)
    x = rng.uniform(0.0, 1.0, 1000)
    b = basis_eval(kv, x)
    assert b.shape == (1000, cfg.basis_per_feature)
    np.testing.assert_allclose(b.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(b >= 0.0)
    assert np.all(np.count_nonzero(b, axis=1) <= cfg.order)


@given(st.floats(0.0, 1.0), st.integers(0, 8), st.integers(2, 5))
def test_partition_of_unity_property(x, k, order):
    b = basis_eval(make_knots(SplineConfig(order=order, interior_knots=k)), x)
    assert b.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(b >= 0.0)
    assert np.count_nonzero(b) <= order


@pytest.mark.parametrize("cfg", [DEFAULT_SPLINE, FOUR_KNOT_SPLINE])
def test_continuity_across_interior_knots(cfg):
    kv = make_knots(cfg)
    interior = kv.knots[cfg.order:-cfg.order]

    def f(x):
        return basis_eval(kv, np.atleast_1d(x))

    h = 1e-6
    # a second difference at h = 1e-6 sits below double round-off, so the
    # curvature probe uses a wider stencil (exact for cubics within a span)
    h2 = 1e-4
    for kn in interior:
        assert np.max(np.abs(f(kn + h) - f(kn - h))) < 1e-4
        # one-sided second-order derivative stencils evaluated at the knot
        d1_left = (3 * f(kn) - 4 * f(kn - h) + f(kn - 2 * h)) / (2 * h)
        d1_right = (-3 * f(kn) + 4 * f(kn + h) - f(kn + 2 * h)) / (2 * h)
        assert np.max(np.abs(d1_right - d1_left)) < 1e-4
        d2_left = (2 * f(kn) - 5 * f(kn - h2) + 4 * f(kn - 2 * h2) - f(kn - 3 * h2)) / h2**2
        d2_right = (2 * f(kn) - 5 * f(kn + h2) + 4 * f(kn + 2 * h2) - f(kn + 3 * h2)) / h2**2
        assert np.max(np.abs(d2_right - d2_left)) < 1e-4


def test_third_derivative_jumps_at_knots():
    # sanity check of the probe: order-4 splines are only C2, so the third
    # derivative must jump somewhere at every interior knot
    kv = make_knots(DEFAULT_SPLINE)
    h = 1e-3

    def f(x):
        return basis_eval(kv, np.atleast_1d(x))

    for kn in kv.knots[4:-4]:
        d3_left = (f(kn) - 3 * f(kn - h) + 3 * f(kn - 2 * h) - f(kn - 3 * h)) / h**3
        d3_right = (f(kn + 3 * h) - 3 * f(kn + 2 * h) + 3 * f(kn + h) - f(kn)) / h**3
        assert np.max(np.abs(d3_right - d3_left)) > 1.0


def test_design_matrix_width_and_blocks(rng):
    feats = rng.uniform(0.0, 1.0, (50, 3))
    dm = design_matrix(feats, DEFAULT_SPLINE)
    assert dm.shape == (50, 18)
    assert dm.feature_blocks == ((0, 6), (6, 6), (12, 6))
    for start, width in dm.feature_blocks:
        np.testing.assert_allclose(dm.values[:, start:start + width].sum(axis=1), 1.0,
                                   atol=1e-12)
    assert design_matrix(feats, FOUR_KNOT_SPLINE).width == 24


def test_design_matrix_empty_input():
    dm = design_matrix(np.zeros((0, 3)), DEFAULT_SPLINE)
    assert dm.shape == (0, 18)


def test_design_matrix_reports_offending_rows():
    feats = np.full((5, 3), 0.5)
    feats[1, 0] = 1.2
    feats[3, 2] = -0.1
    with pytest.raises(SplineDomainError, match="rows 1, 3"):
        design_matrix(feats)


def test_design_matrix_csv_header(tmp_path):
    dm = design_matrix(np.full((2, 3), 0.25), SplineConfig(order=2, interior_knots=0))
    dm.to_csv(tmp_path / "x.csv")
    header = (tmp_path / "x.csv").read_text().splitlines()[0]
    assert header == "f0_b0,f0_b1,f1_b0,f1_b1,f2_b0,f2_b1"


@given(hnp.arrays(np.float64, (7, 3), elements=st.floats(0.0, 1.0)))
def test_design_matrix_rows_are_blockwise_stochastic(feats):
    dm = design_matrix(feats, DEFAULT_SPLINE)
    sums = dm.values.reshape(7, 3, 6).sum(axis=2)
    np.testing.assert_allclose(sums, 1.0, atol=1e-12)
