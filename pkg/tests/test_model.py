from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hierpop.gridfn import Grid, GridFunction
from hierpop.model import Affine, Constant, ExpDecay, Hill, Logistic, ModelIngredients, \
    Polynomial, RateError, Tabulated, check_assumptions, environment, environment_matrix, \
    eval_rate, rate_from_dict, rate_to_dict, separable_terms


def ingredients(**kw):
    base = dict(gamma1=Constant(1.0), gamma2=Constant(1.0), mu=Constant(1.0), beta=Constant(1.0),
                w=Constant(1.0), kappa=Constant(1.0), alpha=0.5, m=1.0)
    base.update(kw)
    return ModelIngredients(**base)


def test_environment_zero_and_unit_density():
    g = Grid(1.0, 50)
    ing = ingredients()
    env0 = environment(g.constant(0.0), ing)
    assert np.all(env0.E.values == 0) and env0.P == 0
    env = environment(g.constant(1.0), ing)
    assert np.allclose(env.E.values, 0.5 * g.nodes + (1 - g.nodes), atol=1e-14)
    assert env.P == pytest.approx(1.0)


def test_environment_rejects_negative_density():
    g = Grid(1.0, 10)
    with pytest.raises(ValueError):
        environment(GridFunction(g, -np.ones(11)), ingredients())


def test_scramble_limit_constant_environment():
    g = Grid(1.0, 200)
    p = g.sample(lambda s: np.exp(-3 * s) * (1 + np.sin(7 * s) ** 2))
    env = environment(p, ingredients(alpha=1.0))
    E = env.E.values
    assert E.max() - E.min() <= 1e-12 * np.abs(E).max()
    assert E[0] == pytest.approx(env.P, rel=1e-14)


def test_environment_matrix_matches_environment():
    g = Grid(2.0, 30)
    ing = ingredients(alpha=0.3, w=Affine("s", (1.0, 0.4)), m=2.0)
    p = g.sample(lambda s: 1 + s * s)
    assert np.allclose(environment_matrix(g, ing) @ p.values, environment(p, ing).E.values,
                       rtol=1e-13)


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 10_000))
def test_environment_is_linear(a, b, seed):
    g = Grid(1.0, 32)
    rng = np.random.default_rng(seed)
    p1, p2 = rng.random(33), rng.random(33)
    ing = ingredients(alpha=0.4, w=ExpDecay("s", (1.0, 1.0)))
    M = environment_matrix(g, ing)
    assert np.allclose(M @ (a * p1 + b * p2), a * (M @ p1) + b * (M @ p2), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_environment_is_monotone(seed):
    g = Grid(1.0, 32)
    rng = np.random.default_rng(seed)
    p1 = rng.random(33)
    p2 = p1 + rng.random(33)
    ing = ingredients(alpha=0.7)
    e1, e2 = environment(GridFunction(g, p1), ing), environment(GridFunction(g, p2), ing)
    assert np.all(e1.E.values <= e2.E.values + 1e-15) and e1.P <= e2.P


def test_eval_rate_examples():
    ing = ingredients(gamma1=Constant(2.0), gamma2=Logistic("P", (1.0, 1.0)),
                      beta=Constant(3.0) * Logistic("E", (1.0, 1.0)))
    assert eval_rate("gamma", ing, s=0.3, P=1.0) == pytest.approx(1.0)
    assert eval_rate("gamma_P", ing, s=0.3, P=1.0) == pytest.approx(-0.5)
    assert eval_rate("mu_E", ing, s=0.2, E=3.0) == 0.0
    assert eval_rate("beta", ing, s=0.1, y=0.4, E=0.0) == pytest.approx(3.0)
    assert eval_rate("beta_E", ing, s=0.1, y=0.4, E=0.0) == pytest.approx(-3.0)
    with pytest.raises(RateError):
        eval_rate("beta", ing, s=0.1, y=0.2, E=0.0, d=("E", "E", "E"))
    with pytest.raises(RateError):
        eval_rate("nope", ing)


@pytest.mark.parametrize("expr", [
    Polynomial("s", (1.0, -2.0, 0.5)), Affine("s", (2.0, 0.3)), ExpDecay("s", (2.0, 1.3)),
    Logistic("s", (1.5, 0.7)), Hill("s", (2.0, 3.0)),
    ExpDecay("s", (1.0, 0.5)) * Logistic("s", (2.0, 1.0)) + Affine("s", (0.1, 0.2)),
])
def test_analytic_derivatives_match_differences(expr):
    x = np.linspace(0.2, 1.8, 9)
    for h in (1e-3,):
        fd1 = (expr(s=x + h) - expr(s=x - h)) / (2 * h)
        fd2 = (expr(s=x + h) - 2 * expr(s=x) + expr(s=x - h)) / h**2
        assert np.allclose(expr.derivative(("s",), s=x), fd1, atol=50 * h * h)
        assert np.allclose(expr.derivative(("s", "s"), s=x), fd2, atol=1e-4)


def test_tabulated_rate():
    t = Tabulated("s", 0.0, 1.0, (0.0, 1.0, 2.0, 3.0))
    assert t(s=0.5) == pytest.approx(1.5)
    assert t.derivative(("s",), s=0.5) == pytest.approx(3.0)
    with pytest.raises(RateError):
        Tabulated("s", 0.0, 1.0, (1.0, 2.0))


def test_rate_dict_round_trip():
    spec = {"family": "product", "args": [
        {"family": "exp_decay", "var": "s", "coef": [4.0, 1.0]},
        {"family": "logistic", "var": "E", "coef": [1.0, 1.0]}]}
    expr = rate_from_dict(spec)
    assert rate_to_dict(expr) == spec
    assert expr(s=0.0, E=1.0) == pytest.approx(2.0)


def test_rate_dict_errors_name_field_and_families():
    with pytest.raises(RateError, match=r"model\.mu.*valid families.*exp_decay"):
        rate_from_dict({"family": "exp_decai", "coef": [1, 2]}, "model.mu")
    with pytest.raises(RateError, match="2 coefficients"):
        rate_from_dict({"family": "affine", "var": "s", "coef": [1.0]}, "model.w")


def test_ingredient_variable_bindings():
    with pytest.raises(RateError):
        ingredients(mu=Affine("P", (1.0, 1.0)))
    with pytest.raises(ValueError):
        ingredients(m=-1.0)


def test_separable_terms_distribute():
    beta = (ExpDecay("s", (3.0, 1.0)) * Affine("y", (0.5, 1.0))
            + Polynomial("s", (0.0, 2.0)) * ExpDecay("y", (1.0, 2.0))) * Logistic("E", (1.0, 1.0))
    terms = separable_terms(beta)
    assert len(terms) == 2
    s, y, E = 0.3, 0.6, 0.8
    total = sum(a(s=s) * b(y=y, E=E) for a, b in terms)
    assert total == pytest.approx(beta(s=s, y=y, E=E), rel=1e-14)


def test_check_assumptions_examples():
    assert check_assumptions(ingredients()).ok
    rep = check_assumptions(ingredients(gamma1=Affine("s", (1.0, -1.0)), m=2.0))
    assert not rep.ok
    msg = rep.violations[0].message
    assert "gamma <= 0 at s >= 1" in msg
    rep = check_assumptions(ingredients(mu=Affine("E", (1.0, -0.5))), p_max=10.0)
    assert any("mu may go negative for large E" in v.message for v in rep.violations)
    v = next(v for v in rep.violations if v.rate == "mu")
    assert v.where["E"] == pytest.approx(2.25)
