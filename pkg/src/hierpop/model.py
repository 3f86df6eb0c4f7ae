"""Model ingredients: vital rates, their derivatives, environment and P.

Rates are small expression trees built from a catalog of univariate
families (each reading one of the variables ``s``, ``y``, ``E``, ``P``)
combined with ``product`` and ``sum`` nodes. Derivatives up to second
order come out in closed form through the Leibniz rule, which is what the
linearization formulas need (``gamma_s``, ``gamma_Ps``, ``mu_E``, ...).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .gridfn import Grid, GridFunction, cumtrapz, trapz

VARIABLES = ("s", "y", "E", "P")


class RateError(ValueError):
    pass


class RateExpr:
    """Base class for rate expressions.

    ``expr(s=..., E=...)`` evaluates with numpy broadcasting;
    ``expr.derivative(("s", "P"), s=..., P=...)`` evaluates a partial
    derivative of order at most two.
    """

    family = "?"

    def variables(self) -> frozenset:
        raise NotImplementedError

    def _eval(self, args, d):
        raise NotImplementedError

    def __call__(self, **args):
        return self.derivative((), **args)

    def derivative(self, wrt=(), **args):
        wrt = tuple(wrt)
        if len(wrt) > 2:
            raise RateError("only derivatives up to second order are available")
        for v in wrt:
            if v not in VARIABLES:
                raise RateError(f"unknown variable {v!r}")
        missing = self.variables() - set(args)
        if missing:
            raise RateError(f"missing argument(s) {sorted(missing)}")
        return self._eval(args, wrt)

    def __mul__(self, other):
        return Product(self, _as_expr(other))

    __rmul__ = __mul__

    def __add__(self, other):
        return Sum(self, _as_expr(other))

    __radd__ = __add__


def _as_expr(x):
    return x if isinstance(x, RateExpr) else Constant(float(x))


def _zeros_like(args):
    shape = np.broadcast_shapes(*(np.shape(a) for a in args.values())) if args else ()
    return np.zeros(shape)


@dataclass(frozen=True)
class Constant(RateExpr):
    c: float
    family = "constant"

    def variables(self):
        return frozenset()

    def _eval(self, args, d):
        out = _zeros_like(args)
        if not d:
            out = out + self.c
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class Univariate(RateExpr):
    """A catalog family applied to a single variable."""

    var: str
    coef: tuple

    nargs = 0

    def __post_init__(self):
        if self.var not in VARIABLES:
            raise RateError(f"unknown variable {self.var!r}; use one of {VARIABLES}")
        object.__setattr__(self, "coef", tuple(float(c) for c in self.coef))
        self._check_arity()

    def _check_arity(self):
        if len(self.coef) != self.nargs:
            raise RateError(
                f"family {self.family!r} takes {self.nargs} coefficients, "
                f"got {len(self.coef)}"
            )

    def variables(self):
        return frozenset([self.var])

    def _eval(self, args, d):
        if any(v != self.var for v in d):
            out = _zeros_like(args)
            return out if out.ndim else float(out)
        x = np.asarray(args[self.var], dtype=float)
        val = self.f(x, len(d))
        out = val + _zeros_like(args)
        return out if out.ndim else float(out)

    def f(self, x, order):
        raise NotImplementedError


class Polynomial(Univariate):
    family = "polynomial"

    def _check_arity(self):
        if len(self.coef) < 1:
            raise RateError("family 'polynomial' needs at least one coefficient")

    def f(self, x, order):
        c = np.polynomial.polynomial.polyder(np.array(self.coef), order) if order else np.array(self.coef)
        if c.size == 0:
            return np.zeros_like(x)
        return np.polynomial.polynomial.polyval(x, c)


class Affine(Univariate):
    """``a + b x``"""

    family = "affine"
    nargs = 2

    def f(self, x, order):
        a, b = self.coef
        return [a + b * x, b + 0 * x, 0 * x][order]


class ExpDecay(Univariate):
    """``a exp(-b x)``"""

    family = "exp_decay"
    nargs = 2

    def f(self, x, order):
        a, b = self.coef
        return a * (-b) ** order * np.exp(-b * x)


class Logistic(Univariate):
    """``a / (1 + b x)``"""

    family = "logistic"
    nargs = 2

    def f(self, x, order):
        a, b = self.coef
        q = 1.0 + b * x
        return [a / q, -a * b / q**2, 2 * a * b * b / q**3][order]


class Hill(Univariate):
    """``a x^c / (1 + x^c)``"""

    family = "hill"
    nargs = 2

    def f(self, x, order):
        a, c = self.coef
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = x**c
            if order == 0:
                return a * xc / (1 + xc)
            if order == 1:
                return a * c * x ** (c - 1) / (1 + xc) ** 2
            return a * c * x ** (c - 2) * ((c - 1) * (1 + xc) - 2 * c * xc) / (1 + xc) ** 3


@dataclass(frozen=True)
class Tabulated(RateExpr):
    """Samples on a uniform grid of one variable; derivatives by differences."""

    var: str
    lo: float
    hi: float
    values: tuple
    family = "tabulated"

    def __post_init__(self):
        if self.var not in VARIABLES:
            raise RateError(f"unknown variable {self.var!r}")
        vals = tuple(float(v) for v in self.values)
        if len(vals) < 3 or not self.hi > self.lo:
            raise RateError("tabulated rate needs >= 3 samples on a non-empty range")
        object.__setattr__(self, "values", vals)

    def variables(self):
        return frozenset([self.var])

    def _table(self, order):
        v = np.array(self.values)
        h = (self.hi - self.lo) / (len(v) - 1)
        for _ in range(order):
            v = np.gradient(v, h, edge_order=1)
        return v

    def _eval(self, args, d):
        if any(v != self.var for v in d):
            out = _zeros_like(args)
            return out if out.ndim else float(out)
        x = np.asarray(args[self.var], dtype=float)
        xs = np.linspace(self.lo, self.hi, len(self.values))
        out = np.interp(x, xs, self._table(len(d))) + _zeros_like(args)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class Product(RateExpr):
    left: RateExpr
    right: RateExpr
    family = "product"

    def variables(self):
        return self.left.variables() | self.right.variables()

    def _eval(self, args, d):
        # Leibniz rule over all ways of splitting the derivative multi-index
        total = 0.0
        idx = range(len(d))
        for r in range(len(d) + 1):
            for chosen in itertools.combinations(idx, r):
                dl = tuple(d[i] for i in chosen)
                dr = tuple(d[i] for i in idx if i not in chosen)
                total = total + self.left._eval(args, dl) * self.right._eval(args, dr)
        return total


@dataclass(frozen=True)
class Sum(RateExpr):
    left: RateExpr
    right: RateExpr
    family = "sum"

    def variables(self):
        return self.left.variables() | self.right.variables()

    def _eval(self, args, d):
        return self.left._eval(args, d) + self.right._eval(args, d)


FAMILIES = {
    "constant": Constant,
    "polynomial": Polynomial,
    "affine": Affine,
    "exp_decay": ExpDecay,
    "logistic": Logistic,
    "hill": Hill,
    "product": Product,
    "sum": Sum,
    "tabulated": Tabulated,
}


def rate_from_dict(spec: dict, where: str = "rate") -> RateExpr:
    """Build a rate from its scenario-file description."""
    if not isinstance(spec, dict):
        raise RateError(f"{where}: expected an object, got {type(spec).__name__}")
    fam = spec.get("family")
    if fam not in FAMILIES:
        raise RateError(
            f"{where}: unknown family {fam!r}; valid families are {sorted(FAMILIES)}"
        )
    try:
        if fam == "constant":
            coef = spec.get("coef", [])
            if len(coef) != 1:
                raise RateError(f"family 'constant' takes 1 coefficient, got {len(coef)}")
            return Constant(float(coef[0]))
        if fam in ("product", "sum"):
            parts = spec.get("args", [])
            if len(parts) != 2:
                raise RateError(f"family {fam!r} combines exactly 2 rates, got {len(parts)}")
            return FAMILIES[fam](
                rate_from_dict(parts[0], f"{where}.args[0]"),
                rate_from_dict(parts[1], f"{where}.args[1]"),
            )
        if fam == "tabulated":
            return Tabulated(spec["var"], float(spec["lo"]), float(spec["hi"]), spec["values"])
        return FAMILIES[fam](spec.get("var", "s"), tuple(spec.get("coef", [])))
    except RateError as exc:
        if str(exc).startswith(where):
            raise
        raise RateError(f"{where}: {exc}") from None
    except KeyError as exc:
        raise RateError(f"{where}: missing field {exc}") from None


def rate_to_dict(expr: RateExpr) -> dict:
    if isinstance(expr, Constant):
        return {"family": "constant", "coef": [expr.c]}
    if isinstance(expr, (Product, Sum)):
        return {"family": expr.family, "args": [rate_to_dict(expr.left), rate_to_dict(expr.right)]}
    if isinstance(expr, Tabulated):
        return {"family": "tabulated", "var": expr.var, "lo": expr.lo, "hi": expr.hi,
                "values": list(expr.values)}
    return {"family": expr.family, "var": expr.var, "coef": list(expr.coef)}


def separable_terms(expr: RateExpr):
    """Expand a fertility expression into ``[(beta_j(s), beta_bar_j(y, E)), ...]``.

    Works for any catalog expression: products distribute over sums and
    each leaf reads a single variable. Returns ``None`` if a leaf reads
    ``P`` (not allowed in the fertility).
    """
    if isinstance(expr, Constant):
        return [(expr, Constant(1.0))]
    if isinstance(expr, Sum):
        a, b = separable_terms(expr.left), separable_terms(expr.right)
        return None if a is None or b is None else a + b
    if isinstance(expr, Product):
        a, b = separable_terms(expr.left), separable_terms(expr.right)
        if a is None or b is None:
            return None
        return [(_simplify(sa * sb), _simplify(ya * yb)) for sa, ya in a for sb, yb in b]
    var = next(iter(expr.variables()))
    if var == "s":
        return [(expr, Constant(1.0))]
    if var in ("y", "E"):
        return [(Constant(1.0), expr)]
    return None


def _simplify(expr):
    if isinstance(expr, Product):
        left, right = _simplify(expr.left), _simplify(expr.right)
        if isinstance(left, Constant) and isinstance(right, Constant):
            return Constant(left.c * right.c)
        if isinstance(left, Constant) and left.c == 1.0:
            return right
        if isinstance(right, Constant) and right.c == 1.0:
            return left
        return Product(left, right)
    return expr


# -- ingredients ---------------------------------------------------------------

_RATE_ARGS = {
    "gamma": ("s", "P"), "gamma_s": ("s", "P"), "gamma_ss": ("s", "P"),
    "gamma_P": ("s", "P"), "gamma_Ps": ("s", "P"),
    "mu": ("s", "E"), "mu_s": ("s", "E"), "mu_E": ("s", "E"),
    "beta": ("s", "y", "E"), "beta_E": ("s", "y", "E"),
    "w": ("s",), "kappa": ("s",),
}


@dataclass(frozen=True)
class ModelIngredients:
    """Rates of the hierarchical size-structured model on ``[0, m]``.

    Growth is separable, ``gamma(s, P) = gamma1(s) * gamma2(P)``.
    ``mu`` reads ``(s, E)``, ``beta`` reads ``(s, y, E)`` where ``E`` is the
    environment at the parent size ``y``; ``w`` and ``kappa`` read ``s``.
    """

    gamma1: RateExpr
    gamma2: RateExpr
    mu: RateExpr
    beta: RateExpr
    w: RateExpr
    kappa: RateExpr
    alpha: float
    m: float

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError("maximal size m must be positive")
        if not self.alpha >= 0:
            raise ValueError("hierarchy parameter alpha must be non-negative")
        allowed = {
            "gamma1": {"s"}, "gamma2": {"P"}, "mu": {"s", "E"},
            "beta": {"s", "y", "E"}, "w": {"s"}, "kappa": {"s"},
        }
        for name, ok in allowed.items():
            extra = getattr(self, name).variables() - ok
            if extra:
                raise RateError(f"{name} may only read {sorted(ok)}, reads {sorted(extra)}")

    def with_(self, **changes) -> "ModelIngredients":
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        kw.update(changes)
        return ModelIngredients(**kw)

    # growth
    def gamma(self, s, P, d=()):
        ds = tuple(v for v in d if v == "s")
        dP = tuple(v for v in d if v == "P")
        return self.gamma1.derivative(ds, s=s) * self.gamma2.derivative(dP, P=P)

    def gamma_s(self, s, P):
        return self.gamma(s, P, ("s",))

    def gamma_ss(self, s, P):
        return self.gamma(s, P, ("s", "s"))

    def gamma_P(self, s, P):
        return self.gamma(s, P, ("P",))

    def gamma_Ps(self, s, P):
        return self.gamma(s, P, ("P", "s"))

    def mu_E(self, s, E):
        return self.mu.derivative(("E",), s=s, E=E)

    def beta_E(self, s, y, E):
        return self.beta.derivative(("E",), s=s, y=y, E=E)

    def beta_terms(self):
        """Separable expansion of ``beta`` (see :func:`separable_terms`)."""
        return separable_terms(self.beta)

    def beta_split(self):
        """``(beta1, beta2)`` if ``beta`` is a single product, else ``None``."""
        terms = self.beta_terms()
        return terms[0] if terms is not None and len(terms) == 1 else None


def eval_rate(which: str, ing: ModelIngredients, **args):
    """Evaluate a rate or one of its partial derivatives by name.

    ``which`` is one of ``gamma``, ``gamma_s``, ``gamma_ss``, ``gamma_P``,
    ``gamma_Ps``, ``mu``, ``mu_s``, ``mu_E``, ``beta``, ``beta_E``, ``w``,
    ``kappa``; an explicit derivative multi-index can instead be given as
    ``which="beta"`` with ``d=("E", "E")``.
    """
    d = tuple(args.pop("d", ()))
    if which not in _RATE_ARGS:
        raise RateError(f"unknown rate selector {which!r}; choose from {sorted(_RATE_ARGS)}")
    base, _, suffix = which.partition("_")
    d = tuple(suffix) + d
    if len(d) > 2:
        raise RateError(f"derivative order {len(d)} is not supported")
    need = _RATE_ARGS[which]
    missing = [a for a in need if a not in args]
    if missing:
        raise RateError(f"{which} needs argument(s) {missing}")
    if base == "gamma":
        return ing.gamma(args["s"], args["P"], d)
    expr = getattr(ing, base)
    return expr.derivative(d, **{k: args[k] for k in need})


# -- environment ---------------------------------------------------------------

@dataclass(frozen=True)
class EnvironmentState:
    E: GridFunction
    P: float


def environment_arrays(p, grid: Grid, ing: ModelIngredients):
    """Raw-array environment ``E(s_i)`` and weighted population ``P``."""
    s = grid.nodes
    wp = ing.w(s=s) * p
    below = cumtrapz(wp, grid.h)
    total = below[..., -1:]
    E = ing.alpha * below + (total - below)
    P = trapz(ing.kappa(s=s) * p, grid.h)
    return E, P


def environment(p: GridFunction, ing: ModelIngredients) -> EnvironmentState:
    """Size-specific environment and weighted population of density ``p``."""
    if np.any(p.values < 0):
        raise ValueError("density must be non-negative")
    E, P = environment_arrays(p.values, p.grid, ing)
    return EnvironmentState(GridFunction(p.grid, E), float(P))


def environment_matrix(grid: Grid, ing: ModelIngredients) -> np.ndarray:
    """Matrix ``M`` with ``M @ u`` equal to the environment of ``u``."""
    n1 = grid.n + 1
    h = grid.h
    # cumulative trapezoid as a lower-triangular weight matrix
    L = np.zeros((n1, n1))
    for i in range(1, n1):
        L[i, :i + 1] = h
        L[i, 0] = L[i, i] = 0.5 * h
    total = np.tile(grid.weights, (n1, 1))
    return (ing.alpha * L + (total - L)) * ing.w(s=grid.nodes)[None, :]


# -- assumption checks ---------------------------------------------------------

@dataclass
class Violation:
    rate: str
    message: str
    where: dict = field(default_factory=dict)


@dataclass
class AssumptionReport:
    violations: list
    warnings: list
    e_max: float
    p_max: float

    @property
    def ok(self) -> bool:
        return not self.violations

    def as_dict(self):
        return {
            "ok": self.ok,
            "e_max": self.e_max,
            "p_max": self.p_max,
            "violations": [vars(v) for v in self.violations],
            "warnings": [vars(v) for v in self.warnings],
        }


def check_assumptions(ing: ModelIngredients, p_max: float = 10.0, e_max=None,
                      samples: int = 201) -> AssumptionReport:
    """Sample every rate and report sign or finiteness violations.

    ``P`` is sampled on ``[0, p_max]`` and ``E`` on ``[0, e_max]``
    (``e_max`` defaults to ``p_max``).
    """
    e_max = p_max if e_max is None else e_max
    s = np.linspace(0.0, ing.m, samples)
    P = np.linspace(0.0, p_max, 41)
    E = np.linspace(0.0, e_max, 41)
    y = np.linspace(0.0, ing.m, 41)
    violations, warnings = [], []

    def finite(name, vals):
        if not np.all(np.isfinite(vals)):
            violations.append(Violation(name, f"{name} is not finite on the sampled domain"))
            return False
        return True

    with np.errstate(all="ignore"):
        g = ing.gamma(s[:, None], P[None, :])
        if finite("gamma", g) and np.any(g <= 0):
            i, j = np.argwhere(g <= 0)[0]
            bad_s = s[np.any(g <= 0, axis=1)]
            violations.append(Violation(
                "gamma", f"gamma <= 0 at s >= {bad_s.min():.6g}",
                {"s": float(s[i]), "P": float(P[j])}))
        k = ing.kappa(s=s) + np.zeros_like(s)
        if finite("kappa", k) and np.any(k <= 0):
            violations.append(Violation(
                "kappa", f"kappa <= 0 at s = {s[np.argmax(k <= 0)]:.6g}"))
        wv = ing.w(s=s) + np.zeros_like(s)
        if finite("w", wv) and np.any(wv < 0):
            violations.append(Violation("w", f"w < 0 at s = {s[np.argmax(wv < 0)]:.6g}"))
        mu = ing.mu(s=s[:, None], E=E[None, :]) + np.zeros((s.size, E.size))
        if finite("mu", mu) and np.any(mu < 0):
            cols = np.any(mu < 0, axis=0)
            threshold = float(E[np.argmax(cols)])
            if not np.any(mu[:, 0] < 0):
                violations.append(Violation(
                    "mu", f"mu may go negative for large E (first negative at E = {threshold:.6g})",
                    {"E": threshold}))
            else:
                violations.append(Violation("mu", "mu < 0 already at E = 0", {"E": 0.0}))
        b = ing.beta(s=s[::5, None, None], y=y[None, :, None], E=E[None, None, :])
        b = b + np.zeros((s[::5].size, y.size, E.size))
        if finite("beta", b) and np.any(b < 0):
            violations.append(Violation(
                "beta", f"beta < 0 somewhere (min {b.min():.6g})",
                {"E": float(E[np.argwhere(b < 0)[0][2]])}))
        if ing.alpha < 0:
            violations.append(Violation("alpha", "alpha < 0"))
        gs = ing.gamma(s[:, None], P[None, :], ("s", "s"))
        if not np.all(np.isfinite(gs)):
            warnings.append(Violation("gamma", "second s-derivative of gamma not finite"))
    return AssumptionReport(violations, warnings, float(e_max), float(p_max))
