from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groupoid_morse.expr import parse_expression
from groupoid_morse.groupoid import ActionGroupoid
from groupoid_morse.morse import (
    MorseError,
    SpectralGapError,
    check_hessian_normal_invariance,
    check_morse_inequalities,
    classify_critical_point,
    divide_by_one_plus_t,
    find_critical_orbits,
    morse_polynomial,
    negative_orientability,
    poly_to_text,
    quadratic_model,
    verify_local_model,
)
from groupoid_morse.symmetry import finite_preset

from conftest import TILT, setup, sphere


def summary(orbits):
    return [(round(o.value, 9), o.index, o.orbit_size, o.isotropy.order, o.orientable) for o in orbits]


def test_sphere_height_trivial_group():
    _, _, orbits = setup("sphere", "trivial", "x3")
    assert summary(orbits) == [(-1.0, 0, 1, 1, True), (1.0, 2, 1, 1, True)]
    assert morse_polynomial(orbits) == [1, 0, 1]
    bottom = orbits[0]
    assert np.allclose(bottom.normal_spectrum, [1.0, 1.0], atol=1e-10)
    assert bottom.gradient_norm < 1e-8


def test_rp2_inventory():
    _, _, orbits = setup("sphere", "antipodal", "x3^2 + 0.1*x1^2")
    assert summary(orbits) == [(0.0, 0, 2, 1, True), (0.1, 1, 2, 1, True), (1.0, 2, 2, 1, True)]
    # closed-form normal spectra: at e2, Hess = diag(0.2, 2); at e1, (-0.2, 1.8); at e3, (-2, -1.8)
    assert np.allclose(orbits[0].normal_spectrum, [0.2, 2.0], atol=1e-9)
    assert np.allclose(orbits[1].normal_spectrum, [-0.2, 1.8], atol=1e-9)
    assert np.allclose(orbits[2].normal_spectrum, [-2.0, -1.8], atol=1e-9)
    assert morse_polynomial(orbits) == [1, 1, 1]


def test_z3_sphere_stacky_data():
    _, _, orbits = setup("sphere", "cyclic_z 3", "x3")
    assert summary(orbits) == [(-1.0, 0, 1, 3, True), (1.0, 2, 1, 3, True)]
    assert [o.stacky_index for o in orbits] == [0, 2]


def test_reflection_makes_negative_space_non_orientable():
    gpd, f, orbits = setup("sphere", "reflect 2", "x3^2 + 0.1*x1^2")
    by_value = {round(o.value, 9): o for o in orbits}
    # minima at +-e2 are swapped; saddles at +-e1 and maxima at +-e3 are fixed by the reflection
    assert by_value[0.0].orbit_size == 2 and by_value[0.0].orientable
    saddles = [o for o in orbits if o.index == 1]
    maxima = [o for o in orbits if o.index == 2]
    assert len(saddles) == 2 and len(maxima) == 2
    assert all(o.isotropy.order == 2 and not o.orientable for o in saddles + maxima)
    assert not negative_orientability(gpd, f, saddles[0])
    # non-orientable orbits do not enter the polynomial
    assert morse_polynomial(orbits) == [1]


def test_tilted_torus_has_four_points():
    _, _, orbits = setup("torus", "trivial", TILT)
    assert [o.index for o in orbits] == [0, 1, 1, 2]
    assert morse_polynomial(orbits) == [1, 2, 1]
    # critical values +-(2 cos(a) +- 1/cos... ) : the four values of c1 x1 + c3 x3 on the circles
    vals = sorted(o.value for o in orbits)
    assert vals[0] < vals[1] < vals[2] < vals[3]
    assert abs(vals[0] + vals[3]) < 1e-9 and abs(vals[1] + vals[2]) < 1e-9


def test_moment_map_even_indices():
    gpd, f, orbits = setup("sphere", "torus:rotation_z", "x3")
    assert [(o.index, o.orbit_dim, o.isotropy.dim) for o in orbits] == [(0, 0, 1), (2, 0, 1)]
    assert [o.stacky_index for o in orbits] == [-1, 1]
    with pytest.raises(MorseError):
        morse_polynomial(orbits)


def test_circle_orbits_on_sphere():
    gpd, f, orbits = setup("sphere", "torus:rotation_z", "x3^2")
    # equator is a circle of minima; poles are fixed maxima
    kinds = sorted((o.index, o.orbit_dim) for o in orbits)
    assert kinds == [(0, 1), (2, 0), (2, 0)]
    eq = [o for o in orbits if o.orbit_dim == 1][0]
    assert eq.frame.dim == 1 and abs(eq.normal_spectrum[0] - 2.0) < 1e-9


def test_hessian_invariance_under_isotropy():
    for group, fn in (("cyclic_z 3", "x3"), ("dihedral 3", "x3"), ("reflect 2", "x3^2 + 0.1*x1^2")):
        gpd, f, orbits = setup("sphere", group, fn)
        for o in orbits:
            assert check_hessian_normal_invariance(gpd, f, o) < 1e-10


def test_degenerate_point_is_flagged():
    gpd = ActionGroupoid(sphere(), finite_preset("trivial", 3))
    f = parse_expression("x3^3", 3)
    o = classify_critical_point(gpd, f, [1.0, 0.0, 0.0])
    assert not o.nondegenerate
    with pytest.raises(MorseError):
        verify_local_model(gpd, f, o)


def test_spectral_gap_error():
    gpd, f, orbits = setup("sphere", "trivial", "x3")
    o = orbits[0]
    bad = type(o)(**{**o.__dict__, "normal_spectrum": (-1e-12, 1e-12)})
    with pytest.raises(SpectralGapError):
        negative_orientability(gpd, f, bad)


def test_local_model_slope_and_exact_quadratic():
    gpd, f, orbits = setup("sphere", "antipodal", "x3^2 + 0.1*x1^2")
    for o in orbits:
        fit = verify_local_model(gpd, f, o)
        assert fit.passed and (fit.exact or fit.slope >= 2.7)
    # on a flat manifold a quadratic function equals its model exactly
    flat = ActionGroupoid(
        type(sphere()).from_text(3, ["x3"]), finite_preset("trivial", 3)
    )
    q = parse_expression("x1^2 + 2*x2^2", 3)
    o = classify_critical_point(flat, q, [0.0, 0.0, 0.0])
    assert verify_local_model(flat, q, o).exact
    model = quadratic_model(o)
    assert abs(model([0.3, -0.2, 0.0]) - (0.09 + 0.08)) < 1e-12


def test_search_is_seed_stable():
    gpd = ActionGroupoid(sphere(), finite_preset("antipodal", 3))
    f = parse_expression("x3^2 + 0.1*x1^2", 3)
    a = find_critical_orbits(gpd, f)
    b = find_critical_orbits(gpd, f)
    assert [o.representative.tolist() for o in a] == [o.representative.tolist() for o in b]


# polynomials


def test_inequalities_examples():
    r = check_morse_inequalities([1, 1, 1], [1, 0, 0])
    assert r.passed and r.remainder == (0, 1)
    r = check_morse_inequalities([1, 2, 1], [1, 2, 1])
    assert r.passed and r.remainder == (0,)
    r = check_morse_inequalities([1, 0, 1], [1, 0, 1])
    assert r.lacunary and r.lacunary_consistent
    r = check_morse_inequalities([1, 0, 1], [1, 0, 0])
    assert not r.exact
    assert not check_morse_inequalities([1], [1, 1]).passed


def test_divide_by_one_plus_t():
    assert divide_by_one_plus_t([1, 2, 1]) == [1, 1]
    assert divide_by_one_plus_t([0]) == [0]
    assert divide_by_one_plus_t([1, 1, 1]) is None
    assert divide_by_one_plus_t([2]) is None


def _mul(a, b):
    out = [0] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            out[i + j] += x * y
    return out


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.integers(0, 5), min_size=1, max_size=5),
    st.lists(st.integers(0, 5), min_size=1, max_size=5),
)
def test_property_inequalities_recover_remainder(P, R):
    M = [p + q for p, q in zip(P + [0] * 10, _mul(R, [1, 1]) + [0] * 10)]
    M = M[: max(len(P), len(R) + 1)]
    res = check_morse_inequalities(M, P)
    assert res.passed
    want = list(R)
    while len(want) > 1 and want[-1] == 0:
        want.pop()
    assert list(res.remainder) == want


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-5, 5), min_size=1, max_size=6))
def test_property_division_is_exact_when_defined(d):
    q = divide_by_one_plus_t(d)
    if q is not None:
        prod = _mul(q, [1, 1])
        trimmed = list(d)
        while len(trimmed) > 1 and trimmed[-1] == 0:
            trimmed.pop()
        while len(prod) > 1 and prod[-1] == 0:
            prod.pop()
        assert prod == trimmed
    else:
        # (1 + t) divides d iff d(-1) = 0
        assert sum(c * (-1) ** k for k, c in enumerate(d)) != 0


def test_poly_to_text():
    assert poly_to_text([1, 0, 1]) == "1 + t^2"
    assert poly_to_text([0, 2]) == "2t"
    assert poly_to_text([0]) == "0"
