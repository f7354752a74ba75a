from __future__ import annotations

import functools

import numpy as np
import pytest

from groupoid_morse.expr import parse_expression
from groupoid_morse.geometry import LevelSetManifold
from groupoid_morse.groupoid import ActionGroupoid
from groupoid_morse.morse import find_critical_orbits
from groupoid_morse.report import run_scenario
from groupoid_morse.symmetry import finite_preset, torus_preset

SPHERE = "x1^2 + x2^2 + x3^2 - 1"
TORUS = "(sqrt(x1^2 + x2^2) - 2)^2 + x3^2 - 1"
TILT = "0.99875026039496628*x1 + 0.049979169270678331*x3"


@functools.lru_cache(maxsize=None)
def sphere():
    return LevelSetManifold.from_text(3, [SPHERE])


@functools.lru_cache(maxsize=None)
def torus():
    return LevelSetManifold.from_text(3, [TORUS])


@functools.lru_cache(maxsize=None)
def setup(manifold: str, group: str, function: str):
    """(groupoid, f, orbits) for small named configurations, cached across tests."""
    m = sphere() if manifold == "sphere" else torus()
    if group.startswith("torus:"):
        sym = torus_preset(group[6:], 3)
    else:
        sym = finite_preset(group, 3)
    gpd = ActionGroupoid(m, sym)
    f = parse_expression(function, 3)
    return gpd, f, find_critical_orbits(gpd, f)


@functools.lru_cache(maxsize=None)
def pipeline(name: str, tasks: tuple | None = None):
    return run_scenario(name, tasks=list(tasks) if tasks else None)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
