"""Stability of the zero state and of a positive equilibrium.

For all-constant rates with R(0) = 1.5 the zero state is unstable: the
characteristic equation has a positive real root, and the rightmost
eigenvalue of the discretized generator approaches it as the grid refines.
For S1 the full classification report is printed.
"""
from __future__ import annotations

import math

from hierpop import fixture_path
from hierpop.gridfn import Grid
from hierpop.model import Constant, ModelIngredients
from hierpop.scenario import load_scenario
from hierpop.stability import char_trivial, classify, find_real_root, linearize, \
    linearized_matrix, rightmost_eigenvalue
from hierpop.steady import SteadyState, solve_fixed_point

b = 1.5 * math.e  # gamma = mu = m = 1 gives R(0) = b / e
ing = ModelIngredients(Constant(1.0), Constant(1.0), Constant(1.0), Constant(b),
                       Constant(1.0), Constant(1.0), 0.5, 1.0)
g = Grid(1.0, 400)
root = find_real_root(lambda z: char_trivial(z, ing.beta, Constant(1.0), ing, g), (0.0, 10.0))
print(f"characteristic root {root:.8f}")
for n in (100, 200, 400):
    gn = Grid(1.0, n)
    top = rightmost_eigenvalue(linearized_matrix(linearize(SteadyState.zero(gn), ing)))
    print(f"  n={n:4d} rightmost eigenvalue {top.real:.6f}")

s1 = load_scenario(fixture_path("S1")).ingredients
ss = solve_fixed_point(s1, Grid(1.0, 200))
rep = classify(ss, s1)
print(f"S1 verdict: {rep.verdict} (characteristic {rep.char_verdict}, matrix {rep.oracle_verdict})")
for c in rep.triggered_conditions:
    print(f"  {'yes' if c['held'] else 'no ':3s}  {c['condition']}  {c['detail']}")
for note in rep.notes:
    print(f"  note: {note}")
