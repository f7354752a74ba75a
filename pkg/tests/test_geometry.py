from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groupoid_morse.expr import parse_expression
from groupoid_morse.geometry import LevelSetManifold, ProjectionError, RankDeficiencyError

from conftest import SPHERE, sphere, torus

vec3 = st.lists(st.floats(min_value=-2, max_value=2), min_size=3, max_size=3).filter(
    lambda v: np.linalg.norm(v) > 0.2
)


@settings(max_examples=50, deadline=None)
@given(vec3)
def test_property_projection_lands_on_sphere_radially(v):
    m = sphere()
    y = m.project(v)
    assert abs(np.linalg.norm(y) - 1) < 1e-12
    # the nearest point of the unit sphere is v/|v|
    assert np.allclose(y, np.array(v) / np.linalg.norm(v), atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(vec3, vec3)
def test_property_tangent_projector(x, w):
    m = sphere()
    x = m.project(x)
    P = m.tangent_projector(x).matrix
    assert np.allclose(P, P.T, atol=1e-14)
    assert np.allclose(P @ P, P, atol=1e-12)
    assert abs(float(x @ (P @ np.array(w)))) < 1e-12
    T = m.tangent_frame(x)
    assert T.shape == (3, 2)
    assert np.allclose(T.T @ T, np.eye(2), atol=1e-12)


def test_retraction_is_second_order():
    m = sphere()
    x = np.array([0.0, 0.0, 1.0])
    v = np.array([1.0, 0.0, 0.0])
    for t in (1e-1, 1e-2, 1e-3):
        y = m.retract(x, t * v)
        geo = np.array([np.sin(t), 0.0, np.cos(t)])
        # projection retraction agrees with the geodesic to second order
        assert np.linalg.norm(y - geo) < t**3


def test_height_function_gradient_and_hessian_closed_form():
    # f = x3 on S^2: grad = e3 - x3 x, Hess = -x3 I on the tangent space
    m = sphere()
    f = parse_expression("x3", 3)
    rng = np.random.default_rng(0)
    for _ in range(10):
        x = m.project(rng.normal(size=3))
        g = m.riemannian_gradient(f, x)
        assert np.allclose(g, np.array([0, 0, 1.0]) - x[2] * x, atol=1e-12)
        H = m.riemannian_hessian(f, x)
        assert np.allclose(H, -x[2] * np.eye(2), atol=1e-12)


def test_torus_hessian_at_top_of_outer_circle():
    # f = x1 at (3,0,0): both principal directions curve away, Hessian = -diag(1/3, 1)
    m = torus()
    f = parse_expression("x1", 3)
    x = np.array([3.0, 0.0, 0.0])
    H = m.riemannian_hessian(f, x)
    assert np.allclose(np.sort(np.linalg.eigvalsh(H)), [-1.0, -1.0 / 3.0], atol=1e-12)


def test_projection_failure_and_rank_deficiency():
    m = sphere()
    with pytest.raises((RankDeficiencyError, ProjectionError)):
        m.project([0.0, 0.0, 0.0])
    cone = LevelSetManifold.from_text(3, ["x1^2 + x2^2 - x3^2"])
    with pytest.raises(RankDeficiencyError):
        cone.tangent_frame([0.0, 0.0, 0.0])


def test_sample_points_deterministic_and_on_manifold():
    m = torus()
    a = m.sample_points(20, seed=3, box=3.5)
    b = m.sample_points(20, seed=3, box=3.5)
    assert len(a) == 20
    assert all(np.array_equal(p, q) for p, q in zip(a, b))
    assert max(abs(float(m.residual(p)[0])) for p in a) < 1e-12


def test_two_constraints_circle():
    m = LevelSetManifold.from_text(3, [SPHERE, "x3"])
    assert m.dim == 1
    x = m.project([0.5, 0.7, 0.3])
    assert abs(x[2]) < 1e-12 and abs(np.linalg.norm(x) - 1) < 1e-12
