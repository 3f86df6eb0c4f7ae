"""Linear stability of steady states.

Two independent routes to the spectrum of the linearized generator:

* characteristic functions built from the survival factor
  ``f0(s, y; lam) = exp(-int_y^s (gamma_s + mu + lam) / gamma)``, evaluated by
  the same decay recursion as the steady-state kernels, and
* a dense upwind discretization of the full linearized operator whose
  eigenvalues serve as an oracle.

Conventions: the characteristic matrix is ``I - A(lam)`` with
``a_ki = int W_k(s) int_0^s f0 f_i dy ds`` for weights
``W = (kappa, w, beta2(., E*))``, and ``K(lam) = a_11`` so that the scalar
equation reads ``K(lam) = 1``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .gridfn import Grid, GridFunction, decay_convolve, derivative, trapz
from .model import ModelIngredients, RateExpr, environment_arrays, environment_matrix, \
    separable_terms
from .steady import SteadyState


def _on_nodes(expr, n1, **args):
    return np.asarray(expr(**args), dtype=float) + np.zeros(n1)


def _as_nodes(x, grid: Grid, **args):
    """Node values of a GridFunction or a rate (evaluated at ``args``)."""
    if isinstance(x, GridFunction):
        return x.values
    if isinstance(x, RateExpr):
        return _on_nodes(x, grid.n + 1, **args)
    vals = np.asarray(x, dtype=float)
    return vals + np.zeros(grid.n + 1)


# -- linearization ---------------------------------------------------------------

@dataclass(eq=False)
class LinearizationData:
    """Coefficients of the linearized problem around ``p_star``.

    ``f1, f2, f3`` and ``weights[2]`` need a separable fertility
    ``beta1(s) * beta2(y, E)`` (the model's own or a supplied majorant);
    they are ``None`` otherwise.
    """

    grid: Grid
    ing: ModelIngredients
    p_star: GridFunction
    E_star: GridFunction
    P_star: float
    rho_star: GridFunction
    f1: GridFunction
    f2: GridFunction | None
    f3: GridFunction | None
    weights: tuple
    exponent: GridFunction          # (gamma_s + mu) / gamma
    gamma: np.ndarray = field(repr=False)
    log_gamma: np.ndarray = field(repr=False)
    mu_over_gamma: np.ndarray = field(repr=False)
    beta_pair: tuple | None = None  # (beta1, beta2) rates behind f2, f3
    trivial: bool = False

    @property
    def separable(self) -> bool:
        return self.f3 is not None

    def rho_identity_error(self) -> float:
        """Max node gap between ``rho_star`` and ``gamma2'(P*) (gamma1 p*)'``."""
        s = self.grid.nodes
        g1p = _on_nodes(self.ing.gamma1, s.size, s=s) * self.p_star.values
        alt = float(self.ing.gamma2.derivative(("P",), P=self.P_star)) * derivative(g1p, self.grid.h)
        return float(np.max(np.abs(alt - self.rho_star.values)))


def linearize(ss: SteadyState, ing: ModelIngredients, majorant: tuple | None = None
              ) -> LinearizationData:
    """Linearization coefficients at a converged (or zero) steady state.

    ``majorant = (beta1, beta2)`` replaces the model fertility in ``f2``,
    ``f3`` and the third weight; by default the model's own ``beta`` is used
    when it is a single product.
    """
    if not (ss.converged or ss.trivial):
        raise ValueError("linearization needs a converged steady state")
    grid = ss.grid
    s = grid.nodes
    n1 = s.size
    h = grid.h
    p = ss.p_star.values
    E, P = environment_arrays(p, grid, ing)
    P = float(P)
    gam = _on_nodes(lambda **a: ing.gamma(s, P), n1)
    if np.any(gam <= 0):
        raise ValueError("growth rate must be positive on [0, m]")
    dp = derivative(p, h)
    rho = ing.gamma_Ps(s, P) * p + ing.gamma_P(s, P) * dp + np.zeros(n1)
    mu = _on_nodes(ing.mu, n1, s=s, E=E)
    gs = ing.gamma_s(s, P) + np.zeros(n1)
    kappa = _on_nodes(ing.kappa, n1, s=s)
    w = _on_nodes(ing.w, n1, s=s)
    f1 = -rho / gam
    pair = majorant if majorant is not None else ing.beta_split()
    f2 = f3 = W3 = None
    if pair is not None:
        b1, b2 = pair
        beta1 = _on_nodes(b1, n1, s=s)
        W3 = _on_nodes(b2, n1, y=s, E=E)
        b2E = np.asarray(b2.derivative(("E",), y=s, E=E), dtype=float) + np.zeros(n1)
        mu_E = _on_nodes(lambda **a: ing.mu_E(s, E), n1)
        f2 = GridFunction(grid, (beta1 * trapz(b2E * p, h) - mu_E * p) / gam)
        f3 = GridFunction(grid, beta1 / gam)
    return LinearizationData(
        grid, ing, ss.p_star, GridFunction(grid, E), P, GridFunction(grid, rho),
        GridFunction(grid, f1), f2, f3,
        (GridFunction(grid, kappa), GridFunction(grid, w),
         None if W3 is None else GridFunction(grid, W3)),
        GridFunction(grid, (gs + mu) / gam), gam,
        np.log(_on_nodes(ing.gamma1, n1, s=s)), mu / gam, pair, bool(ss.trivial))


# -- characteristic functions ------------------------------------------------------

def _increments(lams, log_gamma, rate_over_gamma, inv_gamma, h):
    """Cell increments of ``int (gamma_s + mu + lam)/gamma``, shape ``(L, n)``.

    ``gamma_s/gamma`` integrates exactly to a log ratio of ``gamma1``; the
    rest uses the trapezoid rule.
    """
    base = np.diff(log_gamma) + 0.5 * h * (rate_over_gamma[1:] + rate_over_gamma[:-1])
    cell = 0.5 * h * (inv_gamma[1:] + inv_gamma[:-1])
    return base[None, :] + np.asarray(lams)[:, None] * cell[None, :]


def _survival_integrals(lams, lin: LinearizationData, rows):
    """``int_0^s f0(s, y; lam) g(y) dy`` for each ``lam`` and row ``g``: ``(L, r, n+1)``."""
    inc = _increments(lams, lin.log_gamma, lin.mu_over_gamma, 1.0 / lin.gamma, lin.grid.h)
    return decay_convolve(inc[:, None, :], np.asarray(rows)[None, :, :], lin.grid.h)


def _lams(lam):
    arr = np.atleast_1d(np.asarray(lam, dtype=complex))
    return arr, np.ndim(lam) == 0


def char_K(lam, lin: LinearizationData):
    """``K(lam) = -int kappa(s) int_0^s f0(s, y; lam) rho*(y) / gamma(y) dy ds``.

    Vectorized over ``lam``; the characteristic equation is ``K(lam) = 1``.
    """
    lams, scalar = _lams(lam)
    inner = _survival_integrals(lams, lin, lin.f1.values[None, :])[:, 0, :]
    out = trapz(lin.weights[0].values * inner, lin.grid.h)
    return complex(out[0]) if scalar else out


def char_matrix(lam, lin: LinearizationData) -> np.ndarray:
    """``A(lam)`` with shape ``(L, 3, 3)`` (or ``(3, 3)`` for scalar ``lam``)."""
    if not lin.separable:
        raise ValueError("characteristic matrix needs a separable fertility "
                         "(beta1(s) * beta2(y, E)); supply a majorant")
    lams, scalar = _lams(lam)
    rows = np.stack([lin.f1.values, lin.f2.values, lin.f3.values])
    inner = _survival_integrals(lams, lin, rows)
    W = np.stack([wt.values for wt in lin.weights]) * lin.grid.weights[None, :]
    A = np.einsum("kn,lin->lki", W, inner)
    return A[0] if scalar else A


def char_det_values(lam, lin: LinearizationData):
    """``det(I - A(lam))``, vectorized over ``lam``."""
    A = char_matrix(lam, lin)
    return np.linalg.det(np.eye(3) - A)


@dataclass
class CharEval:
    lam: complex
    matrix_A: np.ndarray
    value: complex
    nullvector: np.ndarray | None = None


def char_det(lam: complex, lin: LinearizationData, null_tol: float = 1e-8) -> CharEval:
    """Characteristic determinant at one point, with ``(U1, U2, U3)`` near a root."""
    A = char_matrix(complex(lam), lin)
    M = np.eye(3) - A
    val = complex(np.linalg.det(M))
    null = None
    if abs(val) < null_tol:
        null = np.linalg.svd(M)[2][-1].conj()
    return CharEval(complex(lam), A, val, null)


def _trivial_data(grid: Grid, ing: ModelIngredients):
    s = grid.nodes
    n1 = s.size
    gam = _on_nodes(lambda **a: ing.gamma(s, 0.0), n1)
    mu = _on_nodes(ing.mu, n1, s=s, E=np.zeros(n1))
    return gam, np.log(_on_nodes(ing.gamma1, n1, s=s)), mu / gam


def char_trivial(lam, beta1, beta2, ing: ModelIngredients, grid: Grid | None = None):
    """``K^l(lam) = int beta2(s) int_0^s f0(s, y; lam) beta1(y) / gamma(y, 0) dy ds``.

    ``beta1``/``beta2`` are node values (GridFunction) or rates; the zero
    state sets ``E = 0`` and ``P = 0``. Vectorized over ``lam``.
    """
    if grid is None:
        grid = next((b.grid for b in (beta1, beta2) if isinstance(b, GridFunction)), None)
        if grid is None:
            raise ValueError("pass a grid when both fertility factors are rates")
    lams, scalar = _lams(lam)
    s = grid.nodes
    zeros = np.zeros(s.size)
    b1 = _as_nodes(beta1, grid, s=s)
    b2 = _as_nodes(beta2, grid, y=s, E=zeros)
    gam, logg, mog = _trivial_data(grid, ing)
    inc = _increments(lams, logg, mog, 1.0 / gam, grid.h)
    inner = decay_convolve(inc, (b1 / gam)[None, :], grid.h)
    out = trapz(b2 * inner, grid.h)
    return complex(out[0]) if scalar else out


def net_reproduction(p: GridFunction, ing: ModelIngredients, beta1=None, beta2=None,
                     form: int = 2) -> float:
    """Expected lifetime offspring in the standing population ``p``.

    ``form=2``: ``int beta2(s, E)/gamma(s) int_0^s beta1(y) exp(-int_y^s mu/gamma) dy ds``;
    ``form=1``: the same with ``gamma_s`` in the exponent and ``1/gamma(y)``
    inside. Both give the same number up to rounding. The fertility factors
    default to the model's own single-product split.
    """
    if beta1 is None or beta2 is None:
        pair = ing.beta_split()
        if pair is None:
            raise ValueError("net reproduction needs a separable fertility beta1(s) * beta2(y, E)")
        beta1, beta2 = pair
    grid = p.grid
    s = grid.nodes
    h = grid.h
    E, P = environment_arrays(p.values, grid, ing)
    P = float(P)
    b1 = _as_nodes(beta1, grid, s=s)
    b2 = _as_nodes(beta2, grid, y=s, E=E)
    gam = _on_nodes(lambda **a: ing.gamma(s, P), s.size)
    mog = _on_nodes(ing.mu, s.size, s=s, E=E) / gam
    zero_log = np.zeros(s.size)
    if form == 2:
        inc = _increments(np.zeros(1), zero_log, mog, 1.0 / gam, h)
        inner = decay_convolve(inc, b1[None, :], h)[0]
        return float(trapz(b2 / gam * inner, h))
    if form == 1:
        logg = np.log(_on_nodes(ing.gamma1, s.size, s=s))
        inc = _increments(np.zeros(1), logg, mog, 1.0 / gam, h)
        inner = decay_convolve(inc, (b1 / gam)[None, :], h)[0]
        return float(trapz(b2 * inner, h))
    raise ValueError("form must be 1 or 2")


# -- root finding ----------------------------------------------------------------

def find_real_root(char, bracket, tol: float = 1e-10, max_iter: int = 200):
    """Bisection for ``char(lam) = 1`` on a real bracket; ``None`` without a sign change."""
    a, b = (float(v) for v in bracket)
    if not (np.isfinite(a) and np.isfinite(b)) or a >= b:
        raise ValueError(f"invalid bracket ({a}, {b})")
    fa = float(np.real(char(a))) - 1.0
    fb = float(np.real(char(b))) - 1.0
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b
    if np.sign(fa) == np.sign(fb):
        return None
    for _ in range(max_iter):
        c = 0.5 * (a + b)
        fc = float(np.real(char(c))) - 1.0
        if fc == 0.0:
            return c
        if np.sign(fc) == np.sign(fa):
            a, fa = c, fc
        else:
            b = c
        if b - a <= tol:
            break
    return 0.5 * (a + b)


@dataclass(frozen=True)
class Window:
    re_lo: float
    re_hi: float
    im_lo: float
    im_hi: float

    def __post_init__(self):
        if not (self.re_lo < self.re_hi and self.im_lo < self.im_hi):
            raise ValueError("window needs re_lo < re_hi and im_lo < im_hi")

    def contains(self, z) -> bool:
        return self.re_lo <= z.real <= self.re_hi and self.im_lo <= z.imag <= self.im_hi

    def as_list(self):
        return [self.re_lo, self.re_hi, self.im_lo, self.im_hi]


def default_window(lin: LinearizationData, margin: float = 0.1) -> Window:
    """``[-margin, L] x [-20 L, 20 L]`` with ``L = 5 * max(mu, m * beta, gamma / m)``."""
    grid = lin.grid
    s = grid.nodes
    mu = lin.mu_over_gamma * lin.gamma
    B = lin.ing.beta(s=s[:, None], y=s[None, :], E=lin.E_star.values[None, :])
    scale = max(float(np.max(np.abs(mu))), grid.m * float(np.max(np.abs(B))),
                float(np.max(lin.gamma)) / grid.m, 1e-3)
    L = 5.0 * scale
    return Window(-margin, L, -20.0 * L, 20.0 * L)


class ContourError(RuntimeError):
    pass


def _winding(g, corners, tol, max_depth=14):
    """Winding number of ``g`` around 0 along the rectangle ``corners``."""
    lo, hi = corners
    path = np.array([lo, complex(hi.real, lo.imag), hi, complex(lo.real, hi.imag), lo])
    t = np.linspace(0.0, 1.0, 9)
    pts = np.concatenate([a + (b - a) * t[:-1] for a, b in zip(path[:-1], path[1:])] + [path[-1:]])
    vals = g(pts)
    for _ in range(max_depth):
        if np.any(np.abs(vals) < tol):
            raise ContourError("contour passes close to a root")
        d = np.angle(vals[1:] / vals[:-1])
        bad = np.abs(d) > np.pi / 4
        if not bad.any():
            return int(round(d.sum() / (2 * np.pi)))
        mids = 0.5 * (pts[:-1][bad] + pts[1:][bad])
        mvals = g(mids)
        idx = np.nonzero(bad)[0] + 1
        pts = np.insert(pts, idx, mids)
        vals = np.insert(vals, idx, mvals)
    raise ContourError("argument variation not resolved on the contour")


def _newton(g, z0, lo, hi, tol=1e-12, max_iter=60):
    z = complex(z0)
    span = abs(hi - lo)
    for _ in range(max_iter):
        dz_fd = 1e-7 * (1.0 + abs(z))
        vals = g(np.array([z, z + dz_fd, z - dz_fd]))
        der = (vals[1] - vals[2]) / (2 * dz_fd)
        if der == 0 or not np.isfinite(der):
            return None
        step = vals[0] / der
        z -= step
        if abs(z - 0.5 * (lo + hi)) > span:
            return None
        if abs(step) <= tol * (1.0 + abs(z)):
            return z
    return None


def scan_complex(char_eval, window: Window, resolution=(6, 9), threads: int = 1,
                 min_size: float = 1e-6, tol: float = 1e-13):
    """Roots of ``char_eval`` inside ``window`` by the argument principle.

    ``char_eval`` maps an array of complex points to values whose zeros are
    sought. The window is tiled (``resolution`` tiles along the real and
    imaginary axes; an odd imaginary count keeps the real axis off tile
    edges). Tiles with non-zero winding are quartered until they hold a
    single root, which Newton's method then polishes. Returns
    ``(roots, multiplicities)``.
    """
    nx, ny = resolution
    xs = np.linspace(window.re_lo, window.re_hi, nx + 1)
    ys = np.linspace(window.im_lo, window.im_hi, ny + 1)
    tiles = [(complex(xs[i], ys[j]), complex(xs[i + 1], ys[j + 1]))
             for i in range(nx) for j in range(ny)]

    def wind(lo, hi):
        for attempt in range(6):
            try:
                return _winding(char_eval, (lo, hi), tol), (lo, hi)
            except ContourError:
                shift = 1e-3 * (attempt + 1) * (hi - lo) * complex(0.37, 0.61)
                lo, hi = lo - shift, hi - shift
        raise ContourError("could not place a contour clear of roots")

    def search(lo, hi, depth=0):
        k, (lo, hi) = wind(lo, hi)
        if k <= 0:
            return []
        if k == 1 or abs(hi - lo) < min_size or depth > 40:
            z = _newton(char_eval, 0.5 * (lo + hi), lo, hi)
            if z is not None:
                return [(z, k)]
            if abs(hi - lo) < min_size:
                return [(0.5 * (lo + hi), k)]
        # split slightly off centre so new edges avoid the real axis
        for frac in ((0.5137, 0.4871), (0.4711, 0.5293), (0.5419, 0.4583)):
            d = hi - lo
            mid = lo + complex(frac[0] * d.real, frac[1] * d.imag)
            quads = [(lo, mid), (complex(mid.real, lo.imag), complex(hi.real, mid.imag)),
                     (complex(lo.real, mid.imag), complex(mid.real, hi.imag)), (mid, hi)]
            parts = [search(a, b, depth + 1) for a, b in quads]
            out = [r for part in parts for r in part]
            if sum(r[1] for r in out) == k:
                return out
        return out

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            found = [r for res in pool.map(lambda t: search(*t), tiles) for r in res]
    else:
        found = [r for t in tiles for r in search(*t)]
    roots, mult = [], []
    # duplicates share the winding count of their tiles
    for z, k in sorted(found, key=lambda r: (-r[0].real, r[0].imag)):
        near = [i for i, r in enumerate(roots) if abs(z - r) < 1e-6 * (1 + abs(z))]
        if near:
            mult[near[0]] += k
            continue
        roots.append(z)
        mult.append(k)
    return roots, mult


# -- matrix oracle ---------------------------------------------------------------

def linearized_matrix(lin: LinearizationData, modified: bool = False) -> np.ndarray:
    """Dense upwind discretization of the linearized generator.

    Unknowns are ``u(s_1..s_n)``; ``u(s_0) = 0`` is the boundary condition
    and is eliminated. Integrals use trapezoid weights. With
    ``modified=True`` the mortality and fertility sensitivities are replaced
    by their rank-one ``w``-weighted versions and the fertility by its
    separable form (the operators behind :func:`char_det`).
    """
    grid = lin.grid
    ing = lin.ing
    s = grid.nodes
    n1 = s.size
    h = grid.h
    wts = grid.weights
    p = lin.p_star.values
    E = lin.E_star.values
    gam = lin.gamma
    kappa, w = lin.weights[0].values, lin.weights[1].values
    M = np.zeros((n1, n1))
    # transport: -gamma u_s (backward difference) and -(gamma_s + mu) u
    idx = np.arange(1, n1)
    M[idx, idx] -= gam[1:] / h
    M[idx, idx - 1] += gam[1:] / h
    M[idx, idx] -= lin.exponent.values[1:] * gam[1:]
    # growth sensitivity: rank one
    M -= np.outer(lin.rho_star.values, kappa * wts)
    mu_E = _on_nodes(lambda **a: ing.mu_E(s, E), n1)
    if not modified:
        Emat = environment_matrix(grid, ing)
        M -= (mu_E * p)[:, None] * Emat
        B = ing.beta(s=s[:, None], y=s[None, :], E=E[None, :]) + np.zeros((n1, n1))
        BE = ing.beta_E(s[:, None], s[None, :], E[None, :]) + np.zeros((n1, n1))
        M += B * wts[None, :]
        M += (BE * (wts * p)[None, :]) @ Emat
    else:
        if not lin.separable:
            raise ValueError("modified operator needs a separable fertility")
        b1, b2 = lin.beta_pair
        beta1 = _on_nodes(b1, n1, s=s)
        b2E = np.asarray(b2.derivative(("E",), y=s, E=E), dtype=float) + np.zeros(n1)
        M -= np.outer(mu_E * p, w * wts)
        M += np.outer(beta1, lin.weights[2].values * wts)
        M += trapz(b2E * p, h) * np.outer(beta1, w * wts)
    return M[1:, 1:]


def rightmost_eigenvalue(matrix) -> complex:
    """Eigenvalue with the largest real part (dense eigen-solve)."""
    A = np.asarray(matrix)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("need a square matrix")
    eig = np.linalg.eigvals(A)
    if not np.all(np.isfinite(eig)):
        raise np.linalg.LinAlgError("eigenvalue computation did not converge")
    return complex(eig[np.argmax(eig.real)])


def spectrum(matrix) -> np.ndarray:
    eig = np.linalg.eigvals(np.asarray(matrix))
    return eig[np.argsort(-eig.real)]


# -- classification ---------------------------------------------------------------

@dataclass
class StabilityOptions:
    window: Window | None = None
    resolution: tuple = (6, 9)
    tol_spec: float = 1e-6
    rho_eps: float = 0.1        # fraction of m used for the non-vanishing test near 0
    majorant: tuple | None = None
    lower: tuple | None = None  # separable minorant of beta(s, y, 0)
    upper: tuple | None = None  # separable majorant of beta(s, y, 0)
    threads: int = 1
    n_eigs: int = 10


@dataclass
class StabilityReport:
    verdict: str
    triggered_conditions: list
    char_roots: list
    matrix_eigs: list
    rightmost: complex
    scan_window: Window | None
    oracle_verdict: str
    char_verdict: str
    notes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        def cplx(z):
            return [float(np.real(z)), float(np.imag(z))]
        return {
            "verdict": self.verdict,
            "char_verdict": self.char_verdict,
            "oracle_verdict": self.oracle_verdict,
            "triggered_conditions": self.triggered_conditions,
            "char_roots": [cplx(z) for z in self.char_roots],
            "matrix_eigs": [cplx(z) for z in self.matrix_eigs],
            "rightmost": cplx(self.rightmost),
            "scan_window": None if self.scan_window is None else self.scan_window.as_list(),
            "notes": list(self.notes),
        }


def _cond(name, held, detail=""):
    return {"condition": name, "held": bool(held), "detail": detail}


def _sign_ok(vals, sign, rel=1e-10):
    vals = np.asarray(vals, dtype=float)
    slack = rel * max(1.0, float(np.max(np.abs(vals))) if vals.size else 1.0)
    return bool(np.all(sign * vals >= -slack))


def _verdict_from_spectrum(z, tol):
    if z.real > tol:
        return "unstable"
    if z.real < -tol:
        return "stable"
    return "inconclusive"


def _positive_real_root(char, window: Window):
    """Largest-bracket bisection for ``char = 1`` on ``[0, re_hi]``."""
    hi = window.re_hi
    for _ in range(8):
        root = find_real_root(char, (0.0, hi))
        if root is not None:
            return root
        if float(np.real(char(hi))) < 1.0:
            return None
        hi *= 2.0
    return None


def _trivial_pair(ing, which, opts):
    given = opts.lower if which == "lower" else opts.upper
    if given is not None:
        return given
    terms = separable_terms(ing.beta)
    if terms is not None and len(terms) == 1:
        return terms[0]
    return None


def classify(ss: SteadyState, ing: ModelIngredients, opts: StabilityOptions | None = None
             ) -> StabilityReport:
    """Stability verdict from the sufficient conditions plus both spectral oracles.

    ``verdict`` follows the sufficient conditions; ``oracle_verdict`` is the sign of the
    rightmost eigenvalue of the discretized operator and ``char_verdict``
    the outcome of the characteristic-function search in the window.
    """
    opts = opts or StabilityOptions()
    if ss.trivial or not np.any(ss.p_star.values > 0):
        return _classify_trivial(ss, ing, opts)
    return _classify_positive(ss, ing, opts)


def _oracle(lin, opts):
    eigs = spectrum(linearized_matrix(lin))
    top = complex(eigs[0])
    return [complex(z) for z in eigs[:opts.n_eigs]], top, _verdict_from_spectrum(top, opts.tol_spec)


def _classify_trivial(ss, ing, opts):
    grid = ss.grid
    s = grid.nodes
    zero = SteadyState.zero(grid)
    lin = linearize(zero, ing)
    window = opts.window or default_window(lin)
    eigs, top, oracle_verdict = _oracle(lin, opts)
    conds, notes, roots = [], [], []
    B0 = ing.beta(s=s[:, None], y=s[None, :], E=np.zeros((1, s.size))) + np.zeros((s.size, s.size))
    verdict = "inconclusive"
    char_verdict = "inconclusive"

    lower = _trivial_pair(ing, "lower", opts)
    if lower is not None:
        b1, b2 = lower
        outer = np.outer(_as_nodes(b1, grid, s=s), _as_nodes(b2, grid, y=s, E=np.zeros(s.size)))
        below = bool(np.all(outer <= B0 + 1e-12 * max(1.0, np.abs(B0).max())))
        R_l = float(np.real(char_trivial(0.0, b1, b2, ing, grid)))
        conds.append(_cond("minorant below fertility at zero", below))
        conds.append(_cond("R(minorant) > 1", R_l > 1.0, f"R = {R_l:.12g}"))
        if below and R_l > 1.0:
            root = _positive_real_root(lambda lam: char_trivial(lam, b1, b2, ing, grid), window)
            if root is not None:
                roots.append(complex(root))
            verdict = char_verdict = "unstable"

    upper = _trivial_pair(ing, "upper", opts)
    if verdict == "inconclusive" and upper is not None:
        b1, b2 = upper
        outer = np.outer(_as_nodes(b1, grid, s=s), _as_nodes(b2, grid, y=s, E=np.zeros(s.size)))
        above = bool(np.all(outer >= B0 - 1e-12 * max(1.0, np.abs(B0).max())))
        R_u = float(np.real(char_trivial(0.0, b1, b2, ing, grid)))
        conds.append(_cond("majorant above fertility at zero", above))
        conds.append(_cond("R(majorant) < 1", R_u < 1.0, f"R = {R_u:.12g}"))

        def g(z):
            return 1.0 - char_trivial(z, b1, b2, ing, grid)

        found, _ = scan_complex(g, window, opts.resolution, opts.threads)
        roots.extend(found)
        clear = not any(z.real >= -opts.tol_spec for z in found)
        conds.append(_cond("no characteristic root in closed right half of window", clear))
        char_verdict = "stable" if clear else "unstable"
        if above and R_u < 1.0:
            if clear and oracle_verdict == "stable":
                verdict = "stable"
            else:
                notes.append("sufficient condition held but a spectral oracle disagrees")
    if lower is None and upper is None:
        notes.append("fertility is not a single product at zero; supply separable bounds")
    return StabilityReport(verdict, conds, roots, eigs, top, window, oracle_verdict,
                           char_verdict, notes)


def _classify_positive(ss, ing, opts):
    lin = linearize(ss, ing, majorant=opts.majorant)
    grid = lin.grid
    s = grid.nodes
    E = lin.E_star.values
    window = opts.window or default_window(lin)
    eigs, top, oracle_verdict = _oracle(lin, opts)
    conds, notes, roots = [], [], []
    rho = lin.rho_star.values
    scale = max(float(np.max(np.abs(rho))), 1e-300)
    near = s <= opts.rho_eps * grid.m
    rho_nonpos = _sign_ok(rho, -1)
    rho_alive = float(np.mean(np.abs(rho[near]) > 1e-10 * scale)) >= 0.9 if scale > 1e-300 else False
    mu_E = ing.mu_E(s, E) + np.zeros(s.size)
    BE = ing.beta_E(s[:, None], s[None, :], E[None, :]) + np.zeros((s.size, s.size))
    mu_ok = _sign_ok(mu_E, -1)
    K0 = float(np.real(char_K(0.0, lin)))
    conds += [
        _cond("K(0) > 1", K0 > 1.0, f"K(0) = {K0:.12g}"),
        _cond("rho* <= 0", rho_nonpos),
        _cond("rho* nonzero near 0", rho_alive),
        _cond("mu_E <= 0", mu_ok),
        _cond("beta_E >= 0", _sign_ok(BE, 1)),
    ]
    verdict = "inconclusive"
    char_verdict = "inconclusive"
    if K0 > 1.0 and rho_nonpos and rho_alive and mu_ok and _sign_ok(BE, 1):
        root = _positive_real_root(lambda lam: char_K(lam, lin), window)
        if root is not None:
            roots.append(complex(root))
        verdict = char_verdict = "unstable"
    elif lin.separable:
        b1, b2 = lin.beta_pair
        B = ing.beta(s=s[:, None], y=s[None, :], E=E[None, :]) + np.zeros((s.size, s.size))
        Bt = np.outer(_on_nodes(b1, s.size, s=s), lin.weights[2].values)
        b2E = np.asarray(b2.derivative(("E",), y=s, E=E), dtype=float) + np.zeros(s.size)
        BtE = np.outer(_on_nodes(b1, s.size, s=s), b2E)
        dominated = bool(np.all(B <= Bt + 1e-12 * max(1.0, np.abs(Bt).max())))
        conds += [
            _cond("fertility below separable majorant", dominated),
            _cond("majorant_E >= 0", _sign_ok(BtE, 1)),
        ]
        found, _ = scan_complex(lambda z: char_det_values(z, lin), window,
                                opts.resolution, opts.threads)
        roots.extend(found)
        clear = not any(z.real >= -opts.tol_spec for z in found)
        conds.append(_cond("no characteristic root in closed right half of window", clear))
        char_verdict = "stable" if clear else "unstable"
        if dominated and mu_ok and rho_nonpos and _sign_ok(BtE, 1) and clear:
            if oracle_verdict == "stable":
                verdict = "stable"
            else:
                notes.append("sufficient condition held but the matrix oracle disagrees")
        if not clear and any(abs(z) < 1e-6 for z in found):
            notes.append("the comparison operator has a root at 0: the stability "
                         "criterion cannot certify this equilibrium")
    else:
        notes.append("fertility is not a single product; supply a separable majorant")
    return StabilityReport(verdict, conds, roots, eigs, top, window, oracle_verdict,
                           char_verdict, notes)
