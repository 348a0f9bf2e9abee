import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from paramsindy.filtering import (ClosureModel, FilterSpec, box_filter, closure_metrics,
                                  true_sgs_stress)

fields = arrays(np.float64, st.integers(12, 60), elements=st.floats(-5, 5))
widths = st.sampled_from([1, 3, 5, 7, 9, 11])


@given(fields, widths)
def test_box_filter_is_a_contraction(u, k):
    ubar = box_filter(u, k)
    assert np.max(np.abs(ubar)) <= np.max(np.abs(u)) + 1e-12
    assert np.sum(ubar**2) <= np.sum(u**2) * (1 + 1e-12) + 1e-12


@given(fields, widths)
def test_box_filter_preserves_mean(u, k):
    assert box_filter(u, k).mean() == pytest.approx(u.mean(), abs=1e-12)


@given(fields, widths)
def test_sgs_stress_is_non_negative(u, k):
    # filter(u^2) - filter(u)^2 is a windowed variance
    assert np.all(true_sgs_stress(u, k) >= -1e-12 * max(1.0, np.max(u**2)))


def test_box_filter_matches_direct_window_average(rng):
    u = rng.normal(size=25)
    k = 5
    direct = np.array([np.mean(np.take(u, range(i - 2, i + 3), mode="wrap")) for i in range(25)])
    np.testing.assert_allclose(box_filter(u, k), direct, rtol=1e-13)


def test_stress_of_linear_field_in_window():
    # u = a x on a symmetric window of k nodes: variance = a^2 dx^2 (k^2 - 1) / 12
    a, dx, k = 2.0, 0.1, 5
    x = np.arange(40) * dx
    tau = true_sgs_stress(a * x, k)
    np.testing.assert_allclose(tau[5:-5], a**2 * dx**2 * (k**2 - 1) / 12, rtol=1e-10)


def test_closed_storage_filters_the_period():
    x = np.linspace(0, 1, 21)
    u = np.sin(2 * np.pi * x)
    closed = box_filter(u, 3, closed=True)
    open_ = box_filter(u[:-1], 3)
    np.testing.assert_allclose(closed[:-1], open_)
    assert closed[-1] == closed[0]


def test_filter_width_checks():
    with pytest.raises(ValueError):
        FilterSpec(4)
    with pytest.raises(ValueError):
        FilterSpec(0)
    with pytest.raises(ValueError):
        box_filter(np.zeros(5), 7)
    assert FilterSpec(5).delta(0.01) == pytest.approx(0.05)
    np.testing.assert_array_equal(box_filter([1.0, 2.0, 3.0], 1), [1.0, 2.0, 3.0])


def test_closure_formulas_on_a_point():
    f = {"u": 2.0, "u_x": -3.0, "u_xx": 0.5, "u_xxx": 4.0}
    d = 0.1
    assert ClosureModel("taylor").predict(f, d) == pytest.approx(d**2 / 12 * (9 - 1.0))
    assert ClosureModel("leonard", order=1).predict(f, d) == pytest.approx(d**2 * 9)
    assert ClosureModel("leonard", order=3).predict(f, d) == pytest.approx(
        d**2 * 9 + d**4 / 2 * 0.25 + d**6 / 6 * 16)
    assert ClosureModel("smagorinsky", 0.16).predict(f, d) == pytest.approx(0.16**2 * d**2 * 9)
    assert ClosureModel("sindy_signed", 0.16).predict(f, d) == pytest.approx(0.16 * d**2 * 9)
    f["u_x"] = 3.0
    assert ClosureModel("sindy_signed", 0.16).predict(f, d) == pytest.approx(-0.16 * d**2 * 9)


def test_taylor_closure_matches_linear_field_stress():
    a, dx, k = -1.5, 0.02, 7
    x = np.arange(60) * dx
    tau = true_sgs_stress(a * x, k)[10:-10]
    ubar = box_filter(a * x, k)[10:-10]
    fields = {"u": ubar, "u_x": np.full_like(ubar, a), "u_xx": np.zeros_like(ubar)}
    # a k-node window has position variance (k^2 - 1) dx^2 / 12, so that is the matching width
    pred = ClosureModel("taylor").predict(fields, dx * math.sqrt(k**2 - 1))
    np.testing.assert_allclose(pred, tau, rtol=1e-9)
    np.testing.assert_allclose(ClosureModel("taylor").predict(fields, k * dx), a**2 * (k * dx)**2 / 12)


def test_closure_model_validation_and_labels():
    with pytest.raises(ValueError):
        ClosureModel("dynamic")
    with pytest.raises(ValueError):
        ClosureModel("smagorinsky")
    with pytest.raises(ValueError):
        ClosureModel("leonard", order=4)
    with pytest.raises(KeyError):
        ClosureModel("taylor").predict({"u_x": 1.0}, 0.1)
    assert ClosureModel("sindy_signed", 0.1604).label == "sindy(C=0.1604)"
    assert ClosureModel("smagorinsky", 0.16).label == "smagorinsky(Cs=0.16)"


def test_closure_metrics():
    truth = np.array([1.0, 2.0, 3.0, 4.0])
    m = closure_metrics(truth + np.array([0.5, -0.5, 0.5, -0.5]), truth)
    assert m["mse"] == pytest.approx(0.25)
    assert m["mae"] == pytest.approx(0.5)
    assert m["r2"] == pytest.approx(1 - 1.0 / 5.0)
    assert closure_metrics(np.zeros(4) + truth.mean(), truth)["r2"] == pytest.approx(0.0)
    with pytest.raises(ValueError):
        closure_metrics(np.ones(3), np.ones(3))
    with pytest.raises(ValueError):
        closure_metrics(np.ones(3), np.ones(4))
