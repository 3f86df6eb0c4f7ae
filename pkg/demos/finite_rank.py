"""Equilibria for a fertility that is not a single product.

The nonseparable fixture's fertility is replaced by piecewise-constant
finite-rank approximations; doubling the rank roughly halves the change in
the computed equilibrium.
"""
from __future__ import annotations

from hierpop import fixture_path
from hierpop.gridfn import Grid, l1_norm
from hierpop.scenario import load_scenario
from hierpop.steady import solve_fixed_point

ing = load_scenario(fixture_path("nonseparable")).ingredients
g = Grid(ing.m, 400)
prev = None
for rank in (4, 8, 16, 32, 64):
    ss = solve_fixed_point(ing, g, rank=rank)
    line = f"rank={rank:3d}  P*={ss.P_star:.8f}  sup error={ss.decomposition.sup_error:.3e}"
    if prev is not None:
        line += f"  change={l1_norm(ss.p_star.values - prev, g.h):.2e}"
    print(line)
    prev = ss.p_star.values
