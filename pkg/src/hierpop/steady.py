"""Positive steady states through a finite-rank fixed-point map.

For a fertility of finite rank,

    beta(s, y, E(y)) = sum_j beta_j(s) * beta_bar_j(y, E(y)),

a steady state is ``p = sum_j P^j F_j`` where ``F_j`` is the survival
kernel of birth profile ``beta_j``. The unknowns are the environment ``H``,
the weighted population ``P0`` and the birth fluxes ``P^1..P^l``; they are
a fixed point of :func:`phi_map`. A general smooth fertility is reduced to
finite rank by binning the parent size (:func:`decompose_beta`).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .gridfn import (Grid, GridFunction, cumtrapz, cumulative_at, decay_convolve,
                     derivative, l1_norm, trapz)
from .model import (Constant, ModelIngredients, RateExpr, environment_arrays,
                    separable_terms)

log = logging.getLogger(__name__)


class SolverDivergence(RuntimeError):
    """The fixed-point iterates left every bounded set we are willing to track."""


# -- decomposition -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FertilityDecomposition:
    """Finite-rank representation of the fertility on a grid.

    ``profiles[j]`` holds ``beta_j`` at the grid nodes. In
    ``user-separable`` mode ``beta_bars[j]`` is a rate in ``(y, E)``; in
    ``auto-piecewise`` mode the parent-size weights are indicators of the
    bins ``[edges[k-1], edges[k]]`` and the profiles are
    ``beta(s, anchors[k], H(anchors[k]))`` for the environment ``H`` they
    were last refreshed with. An optional ``lead`` term (a separable
    underestimator) is kept in front of the bins, with the bins
    decomposing the non-negative remainder.
    """

    grid: Grid
    mode: str
    profiles: np.ndarray
    beta_bars: tuple = ()
    edges: np.ndarray | None = None
    anchors: np.ndarray | None = None
    lead: tuple | None = None
    ing: ModelIngredients | None = field(default=None, repr=False)
    sup_error: float = float("nan")

    @property
    def rank(self) -> int:
        return self.profiles.shape[0]

    @property
    def n_lead(self) -> int:
        return 0 if self.lead is None else 1

    def profile(self, j: int) -> GridFunction:
        return GridFunction(self.grid, self.profiles[j])

    def refreshed(self, H) -> "FertilityDecomposition":
        """Profiles re-frozen at environment ``H`` (auto-piecewise only)."""
        if self.mode != "auto-piecewise":
            return self
        return replace(self, profiles=_bin_profiles(self.ing, self.grid, np.asarray(H),
                                                    self.anchors, self.lead))

    def weight_integrals(self, F, H) -> np.ndarray:
        """``M[k, j] = int_0^m beta_bar_k(s, H(s)) F_j(s) ds``."""
        F = np.asarray(F)
        s = self.grid.nodes
        H = np.asarray(H)
        h = self.grid.h
        rows = []
        bars = self.beta_bars if self.mode == "user-separable" else (
            () if self.lead is None else (self.lead[1],))
        for bar in bars:
            rows.append(trapz(bar(y=s, E=H) * F, h))
        if self.mode == "auto-piecewise":
            C = cumulative_at(F, self.grid, self.edges)
            rows.extend(np.diff(C, axis=-1).T)
        return np.array(rows).reshape(self.rank, F.shape[0])

    def weights_at(self, y, E) -> np.ndarray:
        """``beta_bar_k(y, E)`` for every term, shape ``(rank,) + shape(y)``."""
        y = np.asarray(y, dtype=float)
        out = []
        bars = self.beta_bars if self.mode == "user-separable" else (
            () if self.lead is None else (self.lead[1],))
        for bar in bars:
            out.append(bar(y=y, E=E) + np.zeros_like(y))
        if self.mode == "auto-piecewise":
            k = _bin_index(y, self.edges)
            out.extend((k == b).astype(float) for b in range(len(self.edges) - 1))
        return np.array(out)


def _bin_index(y, edges):
    # bins are right-closed, y = 0 belongs to the first bin
    return np.clip(np.searchsorted(edges, y, side="left") - 1, 0, len(edges) - 2)


def _bin_profiles(ing, grid, H, anchors, lead):
    s = grid.nodes
    Hy = np.interp(anchors, s, H)
    prof = ing.beta(s=s[None, :], y=anchors[:, None], E=Hy[:, None])
    prof = prof + np.zeros((anchors.size, s.size))
    if lead is not None:
        b1, bb1 = lead
        under = b1(s=s)[None, :] * (bb1(y=anchors, E=Hy) + np.zeros_like(anchors))[:, None]
        prof = np.vstack([b1(s=s) + np.zeros_like(s), prof - under])
    return prof


def decompose_beta(ing: ModelIngredients, H: GridFunction, l: int | None = None,
                   mode: str = "auto-piecewise", anchor: str = "right",
                   underestimator: tuple | None = None,
                   samples: int = 41) -> FertilityDecomposition:
    """Finite-rank decomposition of ``ing.beta`` around environment ``H``.

    ``auto-piecewise`` splits ``[0, m]`` into ``l`` equal parent-size bins and
    freezes each bin's offspring profile at the bin's right end (or its
    midpoint with ``anchor="midpoint"``). ``user-separable`` expands the
    rate expression into its exact product terms. The returned object
    carries ``sup_error``, the largest sampled ``|beta - beta^l|``.
    """
    grid = H.grid
    s = grid.nodes
    if mode == "user-separable":
        terms = separable_terms(ing.beta)
        if terms is None:
            raise ValueError("fertility is not an expression of separable terms")
        prof = np.array([b(s=s) + np.zeros_like(s) for b, _ in terms])
        dec = FertilityDecomposition(grid, mode, prof, tuple(bb for _, bb in terms), ing=ing)
    elif mode == "auto-piecewise":
        if l is None or int(l) != l or l < 1:
            raise ValueError("rank l must be a positive integer")
        edges = np.linspace(0.0, grid.m, int(l) + 1)
        if anchor == "right":
            anchors = edges[1:].copy()
        elif anchor == "midpoint":
            anchors = 0.5 * (edges[1:] + edges[:-1])
        else:
            raise ValueError(f"unknown bin anchor {anchor!r}")
        lead = None
        if underestimator is not None:
            b1, bb1 = underestimator
            lead = (_as_rate(b1), _as_rate(bb1))
        prof = _bin_profiles(ing, grid, H.values, anchors, lead)
        dec = FertilityDecomposition(grid, mode, prof, (), edges, anchors, lead, ing)
    else:
        raise ValueError(f"unknown decomposition mode {mode!r}")
    return replace(dec, sup_error=_sup_error(dec, ing, H, samples))


def _as_rate(x):
    return x if isinstance(x, RateExpr) else Constant(float(x))


def _sup_error(dec, ing, H, samples):
    grid = dec.grid
    # sample offspring sizes at grid nodes, where the profiles are exact
    idx = np.unique(np.round(np.linspace(0, grid.n, samples)).astype(int))
    s = grid.nodes[idx]
    if dec.mode == "auto-piecewise":
        # several points per bin so the worst offset inside each bin is seen
        per = 8
        y = np.unique(np.concatenate([np.linspace(a, b, per) for a, b in
                                      zip(dec.edges[:-1], dec.edges[1:])]))
    else:
        y = np.linspace(0.0, grid.m, samples)
    Hy = np.interp(y, grid.nodes, H.values)
    exact = ing.beta(s=s[:, None], y=y[None, :], E=Hy[None, :]) + np.zeros((s.size, y.size))
    prof_s = dec.profiles[:, idx]
    wts = dec.weights_at(y, Hy)
    approx = np.einsum("ks,ky->sy", prof_s, wts)
    return float(np.max(np.abs(exact - approx)))


# -- survival kernels and the fixed-point map ------------------------------------

def _check_growth(g):
    if np.any(g <= 0):
        raise ValueError("growth rate gamma must be positive on [0, m]")


def kernel_arrays(profiles, H, P0: float, ing: ModelIngredients, grid: Grid) -> np.ndarray:
    """Survival kernels for a stack of birth profiles (rows)."""
    s = grid.nodes
    g = ing.gamma(s, P0) + np.zeros_like(s)
    _check_growth(g)
    rate = (ing.mu(s=s, E=H) + ing.gamma_s(s, P0)) / g
    dG = 0.5 * grid.h * (rate[1:] + rate[:-1])
    return decay_convolve(dG, np.asarray(profiles) / g, grid.h)


def survival_kernel(j: int, H: GridFunction, P0: float, dec: FertilityDecomposition,
                    ing: ModelIngredients) -> GridFunction:
    """Kernel ``F_j(s) = int_0^s exp(-int_x^s (mu + gamma_s)/gamma) beta_j(x)/gamma(x) dx``."""
    if P0 < 0 or np.any(H.values < 0):
        raise ValueError("survival kernel needs H >= 0 and P0 >= 0")
    F = kernel_arrays(dec.profiles[j], H.values, P0, ing, dec.grid)
    return GridFunction(dec.grid, F)


@dataclass(frozen=True, eq=False)
class FixedPointState:
    """Point ``(H, P0, P^1..P^l)`` of the positive cone."""

    H: GridFunction
    P0: float
    Pp: np.ndarray

    def __post_init__(self):
        Pp = np.array(self.Pp, dtype=float).reshape(-1)
        Pp.setflags(write=False)
        object.__setattr__(self, "Pp", Pp)
        object.__setattr__(self, "P0", float(self.P0))

    @property
    def norm(self) -> float:
        return l1_norm(self.H.values, self.H.grid.h) + abs(self.P0) + float(np.abs(self.Pp).sum())

    def in_cone(self) -> bool:
        return bool(np.all(self.H.values >= 0) and self.P0 >= 0 and np.all(self.Pp >= 0))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.H.values, [self.P0], self.Pp])

    @classmethod
    def from_vector(cls, v, grid: Grid) -> "FixedPointState":
        n1 = grid.n + 1
        return cls(GridFunction(grid, v[:n1]), v[n1], v[n1 + 1:])


def _phi_arrays(H, P0, Pp, dec, ing):
    grid = dec.grid
    s = grid.nodes
    h = grid.h
    dec = dec.refreshed(H)
    F = kernel_arrays(dec.profiles, H, P0, ing, grid)
    wF = ing.w(s=s) * F
    below = cumtrapz(wF, h)
    env = ing.alpha * below + (below[:, -1:] - below)
    H_new = Pp @ env
    P0_new = Pp @ trapz(ing.kappa(s=s) * F, h)
    Pp_new = dec.weight_integrals(F, H) @ Pp
    return H_new, P0_new, Pp_new, F, dec


def phi_map(x: FixedPointState, dec: FertilityDecomposition,
            ing: ModelIngredients) -> FixedPointState:
    """One application of the fixed-point map.

    Environment part: ``H'(s) = sum_j P^j (alpha int_0^s w F_j + int_s^m w F_j)``.
    Population part: ``P0' = sum_j P^j int kappa F_j`` and
    ``P^k' = sum_j P^j int beta_bar_k(s, H(s)) F_j(s) ds``, all kernels
    evaluated at the input ``(H, P0)``.
    """
    if not x.in_cone():
        raise ValueError("phi_map is defined on the positive cone")
    if x.Pp.size != dec.rank:
        raise ValueError(f"state has {x.Pp.size} birth fluxes, decomposition rank is {dec.rank}")
    H_new, P0_new, Pp_new, _, _ = _phi_arrays(x.H.values, x.P0, x.Pp, dec, ing)
    return FixedPointState(GridFunction(dec.grid, H_new), P0_new, Pp_new)


# -- solver ----------------------------------------------------------------------

@dataclass
class SolverOptions:
    tol_fp: float = 1e-9
    theta: float = 0.5
    max_iter: int = 20000
    anderson: int = 3
    seed_eps: float = 1e-2
    seed_scale: float = 1.0
    restarts: tuple = (1.0, 10.0, 100.0, 0.1)
    ceiling: float = 1e8
    tol_residual_rel: float = 1e-4
    tol_residual_abs: float = 1e-8


@dataclass(eq=False)
class SteadyState:
    p_star: GridFunction
    E_star: GridFunction
    P_star: float
    residual_l1: float
    iterations: int
    converged: bool
    trivial: bool = False
    fixed_point: FixedPointState | None = None
    decomposition: FertilityDecomposition | None = None
    kernels: np.ndarray | None = field(default=None, repr=False)

    @property
    def grid(self) -> Grid:
        return self.p_star.grid

    @property
    def mass(self) -> float:
        return l1_norm(self.p_star.values, self.grid.h)

    def residual_ok(self, opts: SolverOptions | None = None) -> bool:
        opts = opts or SolverOptions()
        return self.residual_l1 <= opts.tol_residual_rel * self.mass + opts.tol_residual_abs

    def summary(self) -> dict:
        return {
            "converged": self.converged,
            "trivial": self.trivial,
            "iterations": self.iterations,
            "P_star": self.P_star,
            "mass_l1": self.mass,
            "residual_l1": self.residual_l1,
            "rank": None if self.decomposition is None else self.decomposition.rank,
            "mode": None if self.decomposition is None else self.decomposition.mode,
        }

    @classmethod
    def zero(cls, grid: Grid, ing: ModelIngredients | None = None) -> "SteadyState":
        z = grid.constant(0.0)
        return cls(z, z, 0.0, 0.0, 0, True, trivial=True)


class _Anderson:
    """Type-II Anderson mixing on the fixed-point residual ``f = Phi(x) - x``."""

    def __init__(self, depth, theta, weights):
        self.depth = depth
        self.theta = theta
        self.sw = np.sqrt(weights)
        self.reset()

    def reset(self):
        self.dX, self.dF = [], []
        self.last = None

    def step(self, x, f):
        theta = self.theta
        if self.last is not None and self.depth > 0:
            self.dX.append(x - self.last[0])
            self.dF.append(f - self.last[1])
            if len(self.dX) > self.depth:
                self.dX.pop(0)
                self.dF.pop(0)
        self.last = (x, f)
        if not self.dX:
            return x + theta * f
        DX = np.array(self.dX).T
        DF = np.array(self.dF).T
        coef, *_ = np.linalg.lstsq(DF * self.sw[:, None], f * self.sw, rcond=None)
        return x + theta * f - (DX + theta * DF) @ coef


def _resolve_decomposition(ing, grid, decomposition, rank, anchor, underestimator):
    zero_H = grid.constant(0.0)
    if decomposition is not None:
        return decomposition
    if rank is not None:
        return decompose_beta(ing, zero_H, rank, "auto-piecewise", anchor, underestimator)
    return decompose_beta(ing, zero_H, mode="user-separable")


def solve_fixed_point(ing: ModelIngredients, grid: Grid,
                      decomposition: FertilityDecomposition | None = None,
                      rank: int | None = None, anchor: str = "right",
                      underestimator: tuple | None = None,
                      opts: SolverOptions | None = None,
                      seed: FixedPointState | None = None) -> SteadyState:
    """Find a positive steady state by damped (Anderson-accelerated) iteration.

    With neither ``decomposition`` nor ``rank`` the fertility expression is
    expanded into its exact separable terms; with ``rank`` it is binned
    (auto-piecewise). Zero is always a fixed point, so the iteration starts
    from a strictly positive seed and restarts from scaled seeds if it
    stalls or collapses. Raises :class:`SolverDivergence` when the iterate
    norm passes ``opts.ceiling``.
    """
    opts = opts or SolverOptions()
    dec = _resolve_decomposition(ing, grid, decomposition, rank, anchor, underestimator)
    l = dec.rank
    n1 = grid.n + 1
    weights = np.concatenate([grid.weights, np.ones(1 + l)])

    def norm(v):
        return float(np.abs(v) @ weights)

    def phi(v):
        H_new, P0_new, Pp_new, F, d = _phi_arrays(v[:n1], v[n1], v[n1 + 1:], dec, ing)
        return np.concatenate([H_new, [P0_new], Pp_new]), F, d

    total_iter = 0
    outcome = "stalled"
    x = None
    seeds = [seed.to_vector()] if seed is not None else []
    eps = opts.seed_eps * opts.seed_scale
    for scale in opts.restarts:
        v0 = np.concatenate([np.zeros(n1), np.full(1 + l, eps * scale)])
        seeds.append(v0)
    for v in seeds:
        acc = _Anderson(opts.anderson, opts.theta, weights)
        outcome = "stalled"
        for it in range(opts.max_iter):
            total_iter += 1
            fv, _, _ = phi(v)
            f = fv - v
            step_norm = norm(f)
            if not np.all(np.isfinite(fv)) or norm(fv) > opts.ceiling:
                raise SolverDivergence(
                    f"fixed-point iterate norm exceeded {opts.ceiling:g} after {total_iter} iterations")
            if step_norm <= opts.tol_fp:
                # accept the map image: it is in the cone and one step closer
                v = fv
                outcome = "converged"
                break
            v_new = acc.step(v, f)
            if np.any(v_new < 0):
                # Anderson extrapolation left the cone; fall back to a damped step
                acc.reset()
                v_new = v + opts.theta * f
            v = v_new
        if outcome == "converged":
            if norm(v) <= 100 * opts.tol_fp:
                outcome = "collapsed"
                log.info("fixed-point iteration collapsed to zero from seed scale %g", v[-1])
                continue
            x = v
            break
        log.info("fixed-point iteration stalled after %d iterations", opts.max_iter)
        x = v
    if outcome == "collapsed":
        st = SteadyState.zero(grid)
        st.iterations = total_iter
        st.decomposition = dec
        return st
    _, F, dec_final = phi(x)
    state = FixedPointState.from_vector(x, grid)
    p = np.clip(state.Pp @ F, 0.0, None)
    p_star = GridFunction(grid, p)
    res = residual_psi(p_star, ing)
    return SteadyState(p_star, state.H, state.P0, res, total_iter,
                       outcome == "converged" and state.in_cone(), False,
                       state, dec_final, F)


# -- steady-state residual -------------------------------------------------------

def recruitment_full(p, E, grid: Grid, ing: ModelIngredients) -> np.ndarray:
    """``int_0^m beta(s_i, y, E(y)) p(y) dy`` with the full fertility matrix."""
    s = grid.nodes
    B = ing.beta(s=s[:, None], y=s[None, :], E=np.asarray(E)[None, :])
    B = B + np.zeros((s.size, s.size))
    return B @ (grid.weights * p)


def residual_psi(q: GridFunction, ing: ModelIngredients) -> float:
    """L1 norm of ``d/ds(gamma(s, Q) q) + mu(s, E(s, q)) q - int beta(s, y, E(y, q)) q(y) dy``."""
    if np.any(q.values < 0):
        raise ValueError("residual is defined for non-negative densities")
    grid = q.grid
    s = grid.nodes
    E, Q = environment_arrays(q.values, grid, ing)
    flux = ing.gamma(s, Q) * q.values
    res = derivative(flux, grid.h) + ing.mu(s=s, E=E) * q.values \
        - recruitment_full(q.values, E, grid, ing)
    return l1_norm(res, grid.h)


# -- existence conditions ----------------------------------------------------------

@dataclass
class ConditionResult:
    name: str
    status: str  # "pass", "fail", "advisory-pass", "advisory-fail"
    value: float
    detail: str = ""


@dataclass
class ExistenceReport:
    conditions: list
    c_bound: float

    def as_dict(self):
        return {"c_bound": self.c_bound, "conditions": [vars(c) for c in self.conditions]}

    def status(self, name):
        return next(c.status for c in self.conditions if c.name == name)


def check_existence(dec: FertilityDecomposition, ing: ModelIngredients, radius: float,
                    bound=None, e_max: float | None = None,
                    scales=(1.0, 2.0, 5.0, 10.0, 100.0)) -> ExistenceReport:
    """Evaluate the hypotheses of the existence results numerically.

    * ``supercritical_at_zero``: some ``int beta_bar_j(s, 0) F_j(s, 0, 0) ds > 1``.
    * ``c_bound``: the largest ``c`` with ``kappa >= c * sum_k beta_bar_k(s, H)``
      over sampled environments ``H`` (constants in ``[0, e_max]``).
    * ``large_population_bound``: ``int kappa F <= c`` sampled over states
      with ``||H|| + P > radius``; ``F`` is the kernel of ``bound(s)`` when a
      fertility majorant is given (then ``c`` is ``min kappa / bound``),
      otherwise the pointwise maximum of the ``F_j``. Sampling cannot cover
      every state, so this condition is only ever advisory.
    """
    grid = dec.grid
    s = grid.nodes
    h = grid.h
    zero = np.zeros_like(s)
    conds = []

    dec0 = dec.refreshed(zero)
    F0 = kernel_arrays(dec0.profiles, zero, 0.0, ing, grid)
    diag = np.diag(dec0.weight_integrals(F0, zero)) if dec0.rank else np.zeros(0)
    best = float(diag.max()) if diag.size else 0.0
    conds.append(ConditionResult(
        "supercritical_at_zero", "pass" if best > 1 else "fail", best,
        f"max_j int beta_bar_j F_j = {best:.6g} (margin {best - 1:+.6g})"))

    e_max = radius if e_max is None else e_max
    levels = np.linspace(0.0, e_max, 21)
    kap = ing.kappa(s=s) + zero
    ratios = []
    for e in levels:
        tot = dec.weights_at(s, np.full_like(s, e)).sum(axis=0)
        mask = tot > 0
        if np.any(mask):
            ratios.append(np.min(kap[mask] / tot[mask]))
    c = float(min(ratios)) if ratios else float("inf")
    conds.append(ConditionResult("c_bound", "pass" if c > 0 else "fail", c,
                                 "largest c with kappa >= c * sum_k beta_bar_k (sampled)"))

    if bound is not None:
        b = _as_rate(bound)(s=s) + zero
        pos = b > 0
        c_use = float(np.min(kap[pos] / b[pos])) if np.any(pos) else float("inf")
        prof = b[None, :]
        label = "F_b"
    else:
        c_use = c
        prof = None
        label = "max_j F_j"
    worst = -np.inf
    for sc in scales:
        target = radius * sc
        for frac in (0.0, 0.5, 1.0):
            H = np.full_like(s, frac * target / grid.m)
            P = (1.0 - frac) * target + 1e-12
            if prof is None:
                F = kernel_arrays(dec.refreshed(H).profiles, H, P, ing, grid).max(axis=0)
            else:
                F = kernel_arrays(prof, H, P, ing, grid)[0]
            worst = max(worst, float(trapz(kap * F, h)))
    conds.append(ConditionResult(
        "large_population_bound", "advisory-pass" if worst <= c_use else "advisory-fail", worst,
        f"max sampled int kappa {label} = {worst:.6g} vs c = {c_use:.6g} beyond radius {radius:g}"))
    return ExistenceReport(conds, c)
