"""Scenario files: one JSON document describing a complete run.

Layout (every section except ``model`` is optional and defaulted)::

    {
      "name": "S1",
      "model": {"m": 1.0, "alpha": 0.5,
                "gamma1": RATE, "gamma2": RATE, "mu": RATE,
                "beta": RATE, "w": RATE, "kappa": RATE},
      "grid": {"n": 400},
      "solver": {"tol_fp": 1e-9, "theta": 0.5, "max_iter": 20000,
                 "rank": null, "anchor": "right", "seed_eps": 0.01},
      "dynamics": {"cfl": 0.9, "T": 5.0, "output_times": null,
                   "initial": "steady", "layout": "long", "mode": "quasilinear"},
      "stability": {"window": null, "resolution": [6, 9], "tol_spec": 1e-6,
                    "majorant": null, "lower": null, "upper": null},
      "check": {"p_max": 10.0, "e_max": null},
      "output": {"dir": "out"}
    }

``RATE`` is ``{"family": ..., "var": ..., "coef": [...]}``, a
``{"family": "product" | "sum", "args": [RATE, RATE]}`` combination or a
``tabulated`` table. ``majorant``/``lower``/``upper`` are
``{"beta1": RATE(s), "beta2": RATE(y, E)}``. ``initial`` is ``"steady"``
(start from the computed steady state) or a RATE in ``s``.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass

from .model import ModelIngredients, RateError, rate_from_dict, rate_to_dict

SCHEMA_VERSION = 1

DEFAULTS = {
    "grid": {"n": 400},
    "solver": {"tol_fp": 1e-9, "theta": 0.5, "max_iter": 20000, "rank": None,
               "anchor": "right", "seed_eps": 1e-2},
    "dynamics": {"cfl": 0.9, "T": 5.0, "output_times": None, "initial": "steady",
                 "layout": "long", "mode": "quasilinear"},
    "stability": {"window": None, "resolution": [6, 9], "tol_spec": 1e-6,
                  "majorant": None, "lower": None, "upper": None},
    "check": {"p_max": 10.0, "e_max": None},
    "output": {"dir": "out"},
}
RATES = ("gamma1", "gamma2", "mu", "beta", "w", "kappa")


class ScenarioError(ValueError):
    pass


def _merge(section, given, where):
    if given is None:
        given = {}
    if not isinstance(given, dict):
        raise ScenarioError(f"{where}: expected an object")
    unknown = sorted(set(given) - set(section))
    if unknown:
        raise ScenarioError(f"{where}: unknown field(s) {unknown}; known fields are {sorted(section)}")
    out = copy.deepcopy(section)
    out.update(given)
    return out


def _positive(value, where):
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not value > 0:
        raise ScenarioError(f"{where} must be a positive number, got {value!r}")


def _pair(spec, where):
    if spec is None:
        return None
    if not isinstance(spec, dict) or set(spec) != {"beta1", "beta2"}:
        raise ScenarioError(f"{where}: expected {{'beta1': rate, 'beta2': rate}}")
    b1 = rate_from_dict(spec["beta1"], f"{where}.beta1")
    b2 = rate_from_dict(spec["beta2"], f"{where}.beta2")
    if not b1.variables() <= {"s"}:
        raise ScenarioError(f"{where}.beta1 may only read s")
    if not b2.variables() <= {"y", "E"}:
        raise ScenarioError(f"{where}.beta2 may only read y and E")
    return b1, b2


@dataclass(frozen=True)
class Scenario:
    """Validated run description with every default filled in."""

    name: str
    ingredients: ModelIngredients
    grid: dict
    solver: dict
    dynamics: dict
    stability: dict
    check: dict
    output: dict
    source: str | None = None

    def __post_init__(self):
        n = self.grid["n"]
        if not isinstance(n, int) or isinstance(n, bool) or n < 16:
            raise ScenarioError(f"grid.n must be an integer >= 16, got {n!r}")
        for key in ("tol_fp", "theta", "max_iter", "seed_eps"):
            _positive(self.solver[key], f"solver.{key}")
        if self.solver["theta"] > 1:
            raise ScenarioError("solver.theta must lie in (0, 1]")
        rank = self.solver["rank"]
        if rank is not None and (not isinstance(rank, int) or rank < 1):
            raise ScenarioError(f"solver.rank must be a positive integer or null, got {rank!r}")
        if self.solver["anchor"] not in ("right", "midpoint"):
            raise ScenarioError("solver.anchor must be 'right' or 'midpoint'")
        _positive(self.dynamics["cfl"], "dynamics.cfl")
        if self.dynamics["cfl"] > 1:
            raise ScenarioError("dynamics.cfl must lie in (0, 1]")
        _positive(self.dynamics["T"], "dynamics.T")
        if self.dynamics["layout"] not in ("long", "wide"):
            raise ScenarioError("dynamics.layout must be 'long' or 'wide'")
        if self.dynamics["mode"] not in ("quasilinear", "semilinear"):
            raise ScenarioError("dynamics.mode must be 'quasilinear' or 'semilinear'")
        _positive(self.stability["tol_spec"], "stability.tol_spec")
        win = self.stability["window"]
        if win is not None and (len(win) != 4 or not (win[0] < win[1] and win[2] < win[3])):
            raise ScenarioError("stability.window must be [re_lo, re_hi, im_lo, im_hi]")
        _positive(self.check["p_max"], "check.p_max")

    # resolved pieces -------------------------------------------------------
    def pair(self, key):
        return _pair(self.stability[key], f"stability.{key}")

    def initial_rate(self):
        init = self.dynamics["initial"]
        if init == "steady":
            return None
        return rate_from_dict(init, "dynamics.initial")

    def echo(self) -> dict:
        """The resolved scenario as plain JSON data."""
        ing = self.ingredients
        model = {"m": ing.m, "alpha": ing.alpha}
        model.update({k: rate_to_dict(getattr(ing, k)) for k in RATES})
        return {"schema_version": SCHEMA_VERSION, "name": self.name, "model": model,
                "grid": self.grid, "solver": self.solver, "dynamics": self.dynamics,
                "stability": self.stability, "check": self.check, "output": self.output}


def scenario_from_dict(doc: dict, source: str | None = None) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a JSON object")
    known = {"name", "model", "schema_version"} | set(DEFAULTS)
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ScenarioError(f"unknown top-level field(s) {unknown}; known fields are {sorted(known)}")
    model = doc.get("model")
    if not isinstance(model, dict):
        raise ScenarioError("missing 'model' section")
    missing = [k for k in RATES + ("m", "alpha") if k not in model]
    if missing:
        raise ScenarioError(f"model: missing field(s) {missing}")
    extra = sorted(set(model) - set(RATES) - {"m", "alpha"})
    if extra:
        raise ScenarioError(f"model: unknown field(s) {extra}")
    try:
        rates = {k: rate_from_dict(model[k], f"model.{k}") for k in RATES}
        ing = ModelIngredients(alpha=float(model["alpha"]), m=float(model["m"]), **rates)
    except RateError as exc:
        raise ScenarioError(str(exc)) from None
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"model: {exc}") from None
    sections = {k: _merge(v, doc.get(k), k) for k, v in DEFAULTS.items()}
    sc = Scenario(str(doc.get("name", "scenario")), ing, source=source, **sections)
    for key in ("majorant", "lower", "upper"):
        try:
            sc.pair(key)
        except RateError as exc:
            raise ScenarioError(str(exc)) from None
    if sc.dynamics["initial"] != "steady":
        try:
            init = sc.initial_rate()
        except RateError as exc:
            raise ScenarioError(str(exc)) from None
        if not init.variables() <= {"s"}:
            raise ScenarioError("dynamics.initial must be 'steady' or a rate in s")
    return sc


def load_scenario(path) -> Scenario:
    """Read and validate a scenario file."""
    with open(path) as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    try:
        return scenario_from_dict(doc, str(path))
    except ScenarioError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
