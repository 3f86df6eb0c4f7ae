from __future__ import annotations

import math

import numpy as np
import pytest

from hierpop import fixture_path
from hierpop.gridfn import Grid
from hierpop.model import Constant, ModelIngredients
from hierpop.scenario import load_scenario
from hierpop.steady import solve_fixed_point


def bundled(name):
    return load_scenario(fixture_path(name)).ingredients


def constants(R0=1.5, gamma0=1.0, mu0=1.0, m=1.0, alpha=0.5):
    """All-constant rates with net reproduction ``R0`` at zero."""
    unit = (1.0 / mu0) * (m - gamma0 / mu0 * (1.0 - math.exp(-mu0 * m / gamma0)))
    return ModelIngredients(Constant(gamma0), Constant(1.0), Constant(mu0), Constant(R0 / unit),
                            Constant(1.0), Constant(1.0), alpha, m)


def k_closed(lam, b, mu0=1.0, gamma0=1.0, m=1.0):
    a = mu0 + np.asarray(lam, dtype=complex)
    return b / a * (m - gamma0 * (1.0 - np.exp(-a * m / gamma0)) / a)


@pytest.fixture(scope="session")
def s1():
    return bundled("S1")


@pytest.fixture(scope="session")
def s2():
    return bundled("S2")


@pytest.fixture(scope="session")
def s1_steady(s1):
    return solve_fixed_point(s1, Grid(1.0, 400))


@pytest.fixture(scope="session")
def s2_steady(s2):
    return solve_fixed_point(s2, Grid(1.0, 400))
