from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groupoid_morse.expr import parse_expression
from groupoid_morse.groupoid import (
    ActionGroupoid,
    Arrow,
    GroupoidError,
    check_basic,
    check_groupoid_axioms,
    conjugate_presentation_check,
    normal_frame,
    normal_representation,
    orbit_tangent_frame,
)
from groupoid_morse.morse import SearchOptions
from groupoid_morse.symmetry import finite_preset, torus_preset

from conftest import setup, sphere, torus


def test_arrow_bookkeeping():
    gpd = ActionGroupoid(sphere(), finite_preset("cyclic_z 3", 3))
    x = np.array([1.0, 0.0, 0.0])
    a = Arrow(1, x)
    b = Arrow(2, gpd.target(a))
    c = gpd.compose(b, a)
    assert np.allclose(gpd.source(c), x) and np.allclose(gpd.target(c), gpd.target(b))
    assert np.allclose(gpd.target(c), x)  # rotation by 2pi/3 twice more returns
    inv = gpd.inverse(a)
    assert np.allclose(gpd.source(inv), gpd.target(a))
    with pytest.raises(GroupoidError):
        gpd.compose(a, a)  # target of a is not the source of a


@pytest.mark.parametrize("group", ["trivial", "antipodal", "dihedral 4", "torus:rotation_z"])
def test_groupoid_axioms(group):
    sym = torus_preset("rotation_z", 3) if group.startswith("torus") else finite_preset(group, 3)
    assert check_groupoid_axioms(ActionGroupoid(torus(), sym), box=3.5)["passed"]


def test_basic_detection():
    gpd = ActionGroupoid(sphere(), finite_preset("antipodal", 3))
    assert check_basic(gpd, parse_expression("x3^2 + 0.1*x1^2", 3)).passed
    rep = check_basic(gpd, parse_expression("x3", 3))
    assert not rep.passed and rep.max_deviation > 0.1


def test_z3_pole_normal_representation_is_rotation():
    gpd, _, orbits = setup("sphere", "cyclic_z 3", "x3")
    top = orbits[-1]
    assert top.isotropy.order == 3
    G = gpd.symmetry
    c, s = np.cos(2 * np.pi / 3), np.sin(2 * np.pi / 3)
    for g in range(G.order):
        if g == G.identity:
            continue
        R = normal_representation(gpd, g, top.frame)
        assert np.allclose(R.T @ R, np.eye(2), atol=1e-12)
        assert abs(np.linalg.det(R) - 1) < 1e-12
        assert abs(np.trace(R) - 2 * c) < 1e-12
        assert abs(abs(R[1, 0]) - s) < 1e-12


def test_normal_representation_is_homomorphism():
    gpd, _, orbits = setup("sphere", "dihedral 3", "x3")
    top = orbits[-1]
    G = gpd.symmetry
    elems = list(top.isotropy.elements)
    assert len(elems) == 6
    for a in elems:
        for b in elems:
            ab = G.multiply(a, b)
            Ra, Rb, Rab = (normal_representation(gpd, g, top.frame) for g in (a, b, ab))
            assert np.allclose(Ra @ Rb, Rab, atol=1e-12)


def test_normal_representation_rejects_non_fixing_element():
    gpd = ActionGroupoid(sphere(), finite_preset("cyclic_z 3", 3))
    fr = normal_frame(gpd, [1.0, 0.0, 0.0])
    with pytest.raises(GroupoidError):
        normal_representation(gpd, 1, fr)


def test_orbit_and_normal_frames_for_circle_action():
    gpd = ActionGroupoid(sphere(), torus_preset("rotation_z", 3))
    x = np.array([0.6, 0.0, 0.8])
    O = orbit_tangent_frame(gpd, x)
    assert O.shape == (3, 1) and np.allclose(np.abs(O[:, 0]), [0, 1, 0], atol=1e-12)
    F = normal_frame(gpd, x).columns
    assert F.shape == (3, 1) and abs(float(F[:, 0] @ x)) < 1e-12 and abs(float(F[:, 0] @ O[:, 0])) < 1e-12
    pole = normal_frame(gpd, [0.0, 0.0, 1.0])
    assert pole.dim == 2


rot = st.lists(st.floats(min_value=-3, max_value=3), min_size=3, max_size=3)


@settings(max_examples=5, deadline=None)
@given(rot)
def test_property_conjugate_presentation_matches(params):
    from scipy.spatial.transform import Rotation

    Q = Rotation.from_rotvec(params).as_matrix()
    gpd = ActionGroupoid(sphere(), finite_preset("antipodal", 3))
    f = parse_expression("x3^2 + 0.1*x1^2", 3)
    res = conjugate_presentation_check(gpd, f, Q, SearchOptions(n_starts=24))
    assert res["passed"], res
