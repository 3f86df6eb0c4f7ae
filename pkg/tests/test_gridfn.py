from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hierpop.gridfn import Grid, GridFunction, cumtrapz, cumulative_at, cumulative_integral, \
    decay_convolve, derivative, integrate, integrate_between, interpolate, refine, trapz


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid(0.0, 10)
    with pytest.raises(ValueError):
        Grid(1.0, 1)
    with pytest.raises(ValueError):
        Grid(float("nan"), 10)
    g = Grid(2.0, 4)
    assert g.h == 0.5
    assert np.allclose(g.nodes, [0, 0.5, 1, 1.5, 2])
    assert g.weights.sum() == pytest.approx(2.0)


def test_gridfunction_checks_shape_and_finiteness():
    g = Grid(1.0, 4)
    with pytest.raises(ValueError):
        GridFunction(g, np.zeros(4))
    with pytest.raises(ValueError):
        GridFunction(g, [0, 1, np.inf, 0, 0])
    f = GridFunction(g, np.arange(5.0))
    with pytest.raises(ValueError):
        f.values[0] = 3.0
    with pytest.raises(ValueError):
        f + GridFunction(Grid(1.0, 5), np.zeros(6))


def test_constant_and_linear_exact():
    g = Grid(3.0, 7)
    assert integrate(g.constant(2.0)) == pytest.approx(6.0, abs=1e-14)
    assert integrate(g.sample(lambda s: 2 * s + 1)) == pytest.approx(12.0, abs=1e-13)


def test_trapezoid_is_second_order():
    errs = []
    for n in (100, 200):
        g = Grid(1.0, n)
        errs.append(abs(integrate(g.sample(np.exp)) - (np.e - 1)))
    assert errs[0] / errs[1] == pytest.approx(4.0, abs=0.05)


def test_cumulative_and_partial_integrals_agree():
    g = Grid(1.0, 50)
    f = g.sample(lambda s: np.sin(3 * s) + 1.0)
    C = cumulative_integral(f)
    assert C.values[0] == 0.0
    assert C.values[-1] == pytest.approx(integrate(f), rel=1e-14)
    assert np.allclose(cumulative_at(f.values, g, g.nodes), C.values, atol=1e-14)
    parts = sum(integrate_between(f, a, b) for a, b in [(0, 0.13), (0.13, 0.5), (0.5, 1.0)])
    assert parts == pytest.approx(integrate(f), rel=1e-13)


def test_interpolate_bounds():
    g = Grid(1.0, 10)
    f = g.sample(lambda s: s * s)
    assert interpolate(f, 0.5) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        interpolate(f, 1.5)


def test_refine_preserves_linear():
    g = Grid(1.0, 8)
    f = g.sample(lambda s: 3 * s - 1)
    r = refine(f, 4)
    assert r.grid.n == 32
    assert np.allclose(r.values, 3 * r.nodes - 1)
    with pytest.raises(ValueError):
        refine(f, 0)


def test_derivative_second_order():
    errs = []
    for n in (50, 100):
        g = Grid(1.0, n)
        errs.append(np.max(np.abs(derivative(np.sin(g.nodes), g.h) - np.cos(g.nodes))))
    assert 3.0 < errs[0] / errs[1] < 5.0


def test_decay_convolve_matches_direct_sum():
    g = Grid(1.0, 40)
    s = g.nodes
    a = 1.7
    gv = np.cos(s) + 2
    out = decay_convolve(np.full(g.n, a * g.h), gv, g.h)
    # direct trapezoid of exp(-a (s_i - y)) g(y) over [0, s_i]
    direct = [trapz(np.exp(-a * (s[i] - s[:i + 1])) * gv[:i + 1], g.h) if i else 0.0
              for i in range(s.size)]
    assert np.allclose(out, direct, rtol=1e-13, atol=1e-15)


def test_decay_convolve_large_exponent_no_overflow():
    g = Grid(1.0, 100)
    out = decay_convolve(np.full(g.n, 50.0), np.ones(g.n + 1), g.h)
    assert np.all(np.isfinite(out))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=3, max_size=40), st.floats(0.1, 5))
def test_cumtrapz_last_equals_trapz(vals, h):
    v = np.array(vals)
    assert cumtrapz(v, h)[-1] == pytest.approx(trapz(v, h), rel=1e-12, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5))
def test_integral_is_linear(a, b):
    g = Grid(2.0, 16)
    f = g.sample(np.sin)
    h = g.sample(np.exp)
    assert integrate(a * f + b * h) == pytest.approx(a * integrate(f) + b * integrate(h),
                                                    abs=1e-10)
