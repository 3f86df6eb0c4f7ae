"""Find the positive equilibrium of the S1 fixture and check it.

The solver iterates the fixed-point map on the (H, P0, P^1) unknowns, then
we confirm that the lifetime offspring count at the equilibrium is 1 and
that the residual of the stationary equation shrinks as the grid refines.
"""
from __future__ import annotations

from hierpop import fixture_path
from hierpop.gridfn import Grid
from hierpop.scenario import load_scenario
from hierpop.stability import net_reproduction
from hierpop.steady import residual_psi, solve_fixed_point

ing = load_scenario(fixture_path("S1")).ingredients

for n in (100, 200, 400):
    ss = solve_fixed_point(ing, Grid(ing.m, n))
    R = net_reproduction(ss.p_star, ing)
    print(f"n={n:4d}  P*={ss.P_star:.8f}  mass={ss.mass:.6f}  "
          f"residual={residual_psi(ss.p_star, ing):.2e}  R(p*)-1={R - 1:+.1e}  "
          f"iterations={ss.iterations}")

# the equilibrium density at a few sizes
s = ss.grid.nodes
for i in range(0, s.size, 80):
    print(f"  s={s[i]:.2f}  p*={ss.p_star.values[i]:.5f}  E*={ss.E_star.values[i]:.5f}")
