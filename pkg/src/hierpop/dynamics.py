"""Time integration of the size-structured PIDE.

Conservative first-order upwind scheme on the node values of the grid,
explicit Euler in time. The trapezoid weights double as control volumes
(half cells at both ends), so the discrete mass

    M = sum_i weights_i p_i

changes per step by exactly ``dt * (births - deaths - outflow)``, with
births and deaths the trapezoid integrals used everywhere else. The two
half cells treat their own advective outflow implicitly; they would
otherwise need half the interior time step to stay positive.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .gridfn import Grid, GridFunction, trapz
from .model import ModelIngredients, environment_arrays, separable_terms

MODES = ("quasilinear", "semilinear")


class BlowUpError(RuntimeError):
    pass


@dataclass
class _Rates:
    E: np.ndarray
    P: float
    g: float            # growth modulation gamma2(P)
    face_speed: np.ndarray  # speed at s_{i+1/2}, i = 0..n-1
    end_speed: float    # speed at s = m
    mu: np.ndarray      # mortality (already divided by g in semilinear mode)
    births: np.ndarray  # recruitment density (ditto)
    beta_max: float


def _recruitment(p, E, grid, ing, terms):
    """Births at every node plus the largest fertility value seen."""
    s = grid.nodes
    wts = grid.weights
    if terms is None:
        B = ing.beta(s=s[:, None], y=s[None, :], E=E[None, :]) + np.zeros((s.size, s.size))
        return B @ (wts * p), float(B.max())
    prof = np.array([b(s=s) + np.zeros_like(s) for b, _ in terms])
    bars = np.array([bb(y=s, E=E) + np.zeros_like(s) for _, bb in terms])
    births = prof.T @ (bars @ (wts * p))
    beta_max = float((prof.T @ bars).max())
    return births, beta_max


def _rates(p, grid: Grid, ing: ModelIngredients, mode: str, terms) -> _Rates:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; use one of {MODES}")
    s = grid.nodes
    E, P = environment_arrays(p, grid, ing)
    P = float(P)
    g = float(ing.gamma2(P=P))
    faces = 0.5 * (s[1:] + s[:-1])
    speed = ing.gamma1(s=faces) + np.zeros_like(faces)
    end = float(ing.gamma1(s=grid.m))
    mu = ing.mu(s=s, E=E) + np.zeros_like(s)
    births, bmax = _recruitment(p, E, grid, ing, terms)
    if mode == "quasilinear":
        speed, end = speed * g, end * g
    else:
        mu, births, bmax = mu / g, births / g, bmax / g
    return _Rates(E, P, g, speed, end, mu, births, bmax)


def _dt_bound(r: _Rates, grid: Grid, cfl: float) -> float:
    h = grid.h
    vmax = max(float(r.face_speed.max()), r.end_speed)
    mu_max = float(r.mu.max())
    adv = cfl * h / vmax if vmax > 0 else np.inf
    src = 1.0 / (mu_max + grid.m * r.beta_max) if mu_max + r.beta_max > 0 else np.inf
    # interior positivity needs dt * (speed/h + mu) <= 1 at every node
    pos_rate = np.max(r.face_speed[1:] / h + r.mu[1:-1])
    pos = 1.0 / pos_rate if pos_rate > 0 else np.inf
    return float(min(adv, src, pos))


def cfl_dt(p: GridFunction, ing: ModelIngredients, cfl: float = 0.9,
           mode: str = "quasilinear") -> float:
    """Largest stable explicit step for the current state.

    ``min(cfl * h / max speed, 1 / (max mu + m * max beta), 1 / max(speed/h + mu))``;
    the last bound keeps interior nodes non-negative when advection and
    mortality both act at full strength.
    """
    if not 0 < cfl <= 1:
        raise ValueError("cfl must lie in (0, 1]")
    r = _rates(p.values, p.grid, ing, mode, separable_terms(ing.beta))
    return _dt_bound(r, p.grid, cfl)


@dataclass
class StepLedger:
    mass_before: float
    mass_after: float
    births: float
    deaths: float
    outflow: float
    dt: float

    @property
    def imbalance(self) -> float:
        """``M_new - M_old - dt (births - deaths - outflow)``; zero up to rounding."""
        return self.mass_after - self.mass_before - self.dt * (self.births - self.deaths - self.outflow)


def _advance(p, dt, r: _Rates, grid: Grid):
    h = grid.h
    n = grid.n
    src = r.births - r.mu * p
    new = np.empty_like(p)
    new[0] = (p[0] + dt * src[0]) / (1.0 + 2.0 * dt * r.face_speed[0] / h)
    flux = r.face_speed * p[:-1]
    flux[0] = r.face_speed[0] * new[0]
    new[1:n] = p[1:n] + dt / h * (flux[:-1] - flux[1:]) + dt * src[1:n]
    new[n] = (p[n] + 2.0 * dt / h * flux[-1] + dt * src[n]) / (1.0 + 2.0 * dt * r.end_speed / h)
    outflow = r.end_speed * new[n]
    return new, outflow


def step_with_ledger(p: GridFunction, dt: float, ing: ModelIngredients,
                     mode: str = "quasilinear", _terms="auto"):
    """Advance one step and return the new state with its mass ledger."""
    grid = p.grid
    terms = separable_terms(ing.beta) if _terms == "auto" else _terms
    r = _rates(p.values, grid, ing, mode, terms)
    limit = _dt_bound(r, grid, 1.0)
    if dt > limit * (1 + 1e-12):
        raise ValueError(f"time step {dt:g} exceeds the stability limit {limit:g}")
    new, outflow = _advance(p.values, dt, r, grid)
    h = grid.h
    ledger = StepLedger(
        float(trapz(p.values, h)), float(trapz(new, h)),
        float(trapz(r.births, h)), float(trapz(r.mu * p.values, h)), float(outflow), dt)
    return GridFunction(grid, new), ledger


def step(p: GridFunction, dt: float, ing: ModelIngredients,
         mode: str = "quasilinear") -> GridFunction:
    """One explicit upwind step.

    ``quasilinear`` advects with ``gamma(s, P)``; ``semilinear`` advects with
    ``gamma1`` only and divides mortality and recruitment by ``gamma2(P)``,
    i.e. it integrates the same dynamics on the rescaled clock.
    Environment and ``P`` are frozen at the start of the step.
    """
    return step_with_ledger(p, dt, ing, mode)[0]


@dataclass
class SimulationOptions:
    cfl: float = 0.9
    output_times: tuple | None = None
    mode: str = "quasilinear"
    mass_ceiling: float = 1e12
    store_all: bool = False


@dataclass(eq=False)
class Trajectory:
    """Stored snapshots and per-step diagnostics of a simulation.

    ``step_times`` has one entry per state visited (initial state included);
    ``mass``, ``P`` and ``g`` are recorded at those times. ``births``,
    ``deaths``, ``outflow`` and ``imbalance`` belong to the steps between
    consecutive states. In semilinear mode all times are rescaled times.
    """

    grid: Grid
    mode: str
    times: np.ndarray
    snapshots: list
    step_times: np.ndarray
    mass: np.ndarray
    P: np.ndarray
    g: np.ndarray
    births: np.ndarray
    deaths: np.ndarray
    outflow: np.ndarray
    imbalance: np.ndarray
    all_states: list | None = field(default=None, repr=False)

    def at(self, t: float) -> GridFunction:
        i = int(np.argmin(np.abs(self.times - t)))
        return self.snapshots[i]

    def write_csv(self, path, layout: str = "long") -> None:
        """Snapshots as CSV: ``time,s,p`` rows (long) or one column per time (wide)."""
        s = self.grid.nodes
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            if layout == "long":
                out.writerow(["time", "s", "p"])
                for t, snap in zip(self.times, self.snapshots):
                    for si, v in zip(s, snap.values):
                        out.writerow([_fmt(t), _fmt(si), _fmt(v)])
            elif layout == "wide":
                out.writerow(["s"] + [f"t={_fmt(t)}" for t in self.times])
                for i, si in enumerate(s):
                    out.writerow([_fmt(si)] + [_fmt(snap.values[i]) for snap in self.snapshots])
            else:
                raise ValueError("layout must be 'long' or 'wide'")

    def write_diagnostics_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["time", "mass", "P", "outflow"])
            outflow = np.concatenate([[np.nan], self.outflow])
            for row in zip(self.step_times, self.mass, self.P, outflow):
                out.writerow([_fmt(v) for v in row])


def _fmt(x) -> str:
    return format(float(x), ".17g")


def simulate(p0: GridFunction, T: float, ing: ModelIngredients,
             opts: SimulationOptions | None = None) -> Trajectory:
    """Integrate from ``p0`` to time ``T`` with ``dt = cfl_dt`` at every step.

    Snapshots are taken at ``opts.output_times`` (default: start and end)
    by linear interpolation between the bracketing steps.
    """
    opts = opts or SimulationOptions()
    if T <= 0:
        raise ValueError("final time must be positive")
    if np.any(p0.values < 0):
        raise ValueError("initial density must be non-negative")
    grid = p0.grid
    h = grid.h
    terms = separable_terms(ing.beta)
    out_times = np.array(sorted(opts.output_times) if opts.output_times is not None
                         else [0.0, T], dtype=float)
    if out_times[0] < 0 or out_times[-1] > T * (1 + 1e-12):
        raise ValueError("output times must lie in [0, T]")

    p = p0.values.copy()
    t = 0.0
    rec = {k: [] for k in ("t", "mass", "P", "g", "births", "deaths", "outflow", "imb")}
    snaps = []
    states = [p0] if opts.store_all else None
    k_out = 0

    def record_state(r):
        rec["t"].append(t)
        rec["mass"].append(float(trapz(p, h)))
        rec["P"].append(r.P)
        rec["g"].append(r.g)

    r = _rates(p, grid, ing, opts.mode, terms)
    record_state(r)
    while k_out < out_times.size and out_times[k_out] <= t:
        snaps.append(GridFunction(grid, p))
        k_out += 1
    while t < T * (1 - 1e-14):
        dt = min(_dt_bound(r, grid, opts.cfl), T - t)
        new, outflow = _advance(p, dt, r, grid)
        m_old = rec["mass"][-1]
        births = float(trapz(r.births, h))
        deaths = float(trapz(r.mu * p, h))
        t_new = t + dt
        while k_out < out_times.size and out_times[k_out] <= t_new * (1 + 1e-14):
            theta = (out_times[k_out] - t) / dt
            snaps.append(GridFunction(grid, np.clip((1 - theta) * p + theta * new, 0.0, None)))
            k_out += 1
        p, t = new, t_new
        if states is not None:
            states.append(GridFunction(grid, p))
        r = _rates(p, grid, ing, opts.mode, terms)
        record_state(r)
        rec["births"].append(births)
        rec["deaths"].append(deaths)
        rec["outflow"].append(float(outflow))
        rec["imb"].append(rec["mass"][-1] - m_old - dt * (births - deaths - outflow))
        if not np.isfinite(rec["mass"][-1]) or rec["mass"][-1] > opts.mass_ceiling:
            raise BlowUpError(f"total mass exceeded {opts.mass_ceiling:g} at t = {t:g}")
    while k_out < out_times.size:
        snaps.append(GridFunction(grid, p))
        k_out += 1
    arr = {k: np.array(v) for k, v in rec.items()}
    return Trajectory(grid, opts.mode, out_times, snaps, arr["t"], arr["mass"], arr["P"],
                      arr["g"], arr["births"], arr["deaths"], arr["outflow"], arr["imb"],
                      states)


@dataclass(eq=False)
class TimeRescaling:
    """Clock change ``tau(t) = int_0^t gamma2(P(t')) dt'`` along a trajectory."""

    times: np.ndarray
    tau_of_t: np.ndarray
    g_values: np.ndarray

    def tau(self, t):
        return np.interp(t, self.times, self.tau_of_t)

    def t_of(self, tau):
        return np.interp(tau, self.tau_of_t, self.times)


def time_rescale(traj: Trajectory, ing: ModelIngredients) -> TimeRescaling:
    """Rescaled clock of a quasilinear trajectory (trapezoid over its steps)."""
    if traj.mode != "quasilinear":
        raise ValueError("time rescaling starts from a quasilinear trajectory")
    t = traj.step_times
    g = np.array([float(ing.gamma2(P=P)) for P in traj.P])
    tau = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(t) * (g[1:] + g[:-1]))])
    return TimeRescaling(t, tau, g)
