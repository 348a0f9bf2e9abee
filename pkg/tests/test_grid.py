import numpy as np
import pytest
from hypothesis import given, strategies as st

from paramsindy.grid import (FieldSnapshot, Grid1D, SchemeTag, apply_stencil, time_derivative,
                             trim_buffer)

TAGS = ["cd1", "cd2", "cd2_3rd", "cd2_4th"]


def poly_and_derivative(coeffs, x, order):
    p = np.polynomial.Polynomial(coeffs)
    return p(x), p.deriv(order)(x)


@given(st.lists(st.floats(-2, 2), min_size=1, max_size=3),
       st.sampled_from(TAGS), st.floats(0.01, 0.2))
def test_central_stencils_exact_on_quadratics(coeffs, tag, dx):
    # every central stencil here is exact for polynomials up to degree order+1
    tag = SchemeTag(tag)
    deg = tag.order + 1
    coeffs = (coeffs + [0.0] * (deg + 1))[:deg + 1]
    x = np.arange(12) * dx
    u, exact = poly_and_derivative(coeffs, x, tag.order)
    got = trim_buffer(apply_stencil(u, dx, tag), tag.halo)
    scale = max(1.0, np.max(np.abs(exact)))
    np.testing.assert_allclose(got, trim_buffer(exact, tag.halo), atol=1e-7 * scale / dx**tag.order)


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(0.05, 0.2))
def test_upwind_exact_on_quadratics(a, b, c, dx):
    x = np.arange(10) * dx
    u = a + b * x + c * x**2
    exact = b + 2 * c * x
    for advect in (np.ones_like(x), -np.ones_like(x)):
        got = apply_stencil(u, dx, "uw2", advect=advect)
        np.testing.assert_allclose(got[2:-2], exact[2:-2], atol=1e-9)


@pytest.mark.parametrize("tag,expected_order", [("cd1", 2), ("cd2", 2), ("cd2_3rd", 2),
                                                ("cd2_4th", 2), ("uw2", 2)])
def test_periodic_convergence_order(tag, expected_order):
    errs = []
    for n in (64, 128, 256):
        x = np.linspace(0, 2 * np.pi, n, endpoint=False)
        dx = x[1] - x[0]
        u = np.sin(x)
        order = SchemeTag(tag).order
        exact = np.sin(x + order * np.pi / 2)
        advect = np.cos(x) if tag == "uw2" else None
        got = apply_stencil(u, dx, tag, advect=advect, periodic=True)
        errs.append(np.max(np.abs(got - exact)))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > expected_order - 0.2)


def test_periodic_matches_interior_of_open_stencil():
    x = np.linspace(0, 1, 40, endpoint=False)
    u = np.cos(2 * np.pi * x) + x**2
    for tag in TAGS:
        open_ = apply_stencil(u, x[1], tag)
        wrap = apply_stencil(u, x[1], tag, periodic=True)
        h = SchemeTag(tag).halo
        np.testing.assert_allclose(open_[h:-h], wrap[h:-h], rtol=1e-12, atol=1e-9)


def test_upwind_direction_follows_velocity():
    dx = 0.1
    u = np.array([0.0, 0, 0, 1, 0, 0, 0])
    back = apply_stencil(u, dx, "uw2", advect=np.ones(7))
    fwd = apply_stencil(u, dx, "uw2", advect=-np.ones(7))
    # backward stencil at node 4 sees the spike one node upstream
    assert back[4] == pytest.approx(-4 / (2 * dx))
    assert fwd[2] == pytest.approx(4 / (2 * dx))


def test_stencil_argument_checks():
    u = np.zeros(10)
    with pytest.raises(ValueError, match="advecting velocity"):
        apply_stencil(u, 0.1, "uw2")
    with pytest.raises(ValueError, match="only meaningful"):
        apply_stencil(u, 0.1, "cd1", advect=u)
    with pytest.raises(ValueError, match="unknown scheme"):
        apply_stencil(u, 0.1, "cd7")
    with pytest.raises(ValueError, match="at least"):
        apply_stencil(np.zeros(3), 0.1, "cd2_3rd")


def test_stencil_applies_rowwise_on_matrices(rng):
    u = rng.normal(size=(4, 20))
    full = apply_stencil(u, 0.1, "cd2")
    for i in range(4):
        np.testing.assert_array_equal(full[i], apply_stencil(u[i], 0.1, "cd2"))


def test_time_derivative_exact_for_quadratic_in_time():
    grid = Grid1D(0, 1, 8, 0, 1, 11)
    t = grid.t[:, None]
    u = 3 * t**2 - t + np.zeros((1, 8))
    snap = FieldSnapshot(grid, u)
    np.testing.assert_allclose(time_derivative(snap), 6 * t - 1 + np.zeros((1, 8)), atol=1e-12)


def test_trim_buffer():
    v = np.arange(20).reshape(2, 10)
    np.testing.assert_array_equal(trim_buffer(v, 2), v[:, 2:8])
    assert trim_buffer(v, 0) is v
    with pytest.raises(ValueError):
        trim_buffer(v, 5)
    with pytest.raises(ValueError):
        trim_buffer(v, -1)


def test_grid_and_snapshot_validation():
    with pytest.raises(ValueError):
        Grid1D(0, 1, 5, 0, 1, 10)
    with pytest.raises(ValueError):
        Grid1D(1, 0, 10, 0, 1, 10)
    grid = Grid1D(-1, 1, 11, 0, 1, 3)
    assert grid.dx == pytest.approx(0.2)
    assert grid.dt == pytest.approx(0.5)
    with pytest.raises(ValueError, match="shape"):
        FieldSnapshot(grid, np.zeros((3, 10)))
    with pytest.raises(ValueError, match="non-finite"):
        FieldSnapshot(grid, np.full((3, 11), np.nan))
    snap = FieldSnapshot(grid, np.zeros((3, 11)), {"nu": 1})
    with pytest.raises(KeyError, match="C1"):
        snap.require(["nu", "C1"])


def test_scheme_tag_metadata():
    assert [SchemeTag(t).order for t in ("cd1", "uw2", "cd2", "cd2_3rd", "cd2_4th")] == [1, 1, 2, 3, 4]
    assert SchemeTag("cd2_3rd").halo == 2
