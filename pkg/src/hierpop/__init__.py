"""Numerical tools for a hierarchical size-structured population model.

Modules: ``gridfn`` (grids and quadrature), ``model`` (rates and
environment), ``steady`` (steady states), ``dynamics`` (time stepping),
``stability`` (linear stability) and ``cli`` (scenario runs).
"""
from __future__ import annotations

from importlib import resources

__version__ = "0.1.0"


def fixture_path(name: str) -> str:
    """Path of a bundled scenario, e.g. ``fixture_path("S1")``."""
    ref = resources.files(__name__) / "fixtures" / f"{name}.json"
    if not ref.is_file():
        raise FileNotFoundError(f"no bundled scenario named {name!r}")
    return str(ref)
