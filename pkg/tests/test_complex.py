from __future__ import annotations

import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groupoid_morse.complex import (
    ChainComplexOverField,
    ComplexError,
    build_nerve_double_complex,
    build_witten_complex,
    dump_json,
    homology_ranks,
    rank,
    sparse_mul,
    total_cohomology,
    total_square_zero,
)


def to_sparse(a) -> dict:
    return {r: {c: int(v) for c, v in enumerate(row) if v} for r, row in enumerate(a) if any(row)}


def gf2_rank_bruteforce(a: np.ndarray) -> int:
    """Rank over Z/2 as log2 of the size of the row space, enumerated."""
    rows = [tuple(r % 2) for r in a]
    span = {tuple([0] * a.shape[1])}
    for r in rows:
        span |= {tuple((np.array(s) + np.array(r)) % 2) for s in span}
    return int(np.log2(len(span)))


small = st.integers(2, 5).flatmap(
    lambda n: st.lists(st.lists(st.integers(-3, 3), min_size=n, max_size=n), min_size=1, max_size=5)
)


@settings(max_examples=100, deadline=None)
@given(small)
def test_property_rank_over_q_matches_numpy(rows):
    a = np.array(rows)
    assert rank(to_sparse(a), "Q") == np.linalg.matrix_rank(a.astype(float))


@settings(max_examples=100, deadline=None)
@given(small)
def test_property_rank_over_z2_matches_enumeration(rows):
    a = np.array(rows)
    assert rank(to_sparse(a), "Z2") == gf2_rank_bruteforce(a)


def test_rank_with_fractions_and_field_check():
    m = {0: {0: Fraction(1, 2), 1: Fraction(1, 3)}, 1: {0: Fraction(3, 2), 1: Fraction(1, 1)}}
    assert rank(m, "Q") == 1
    with pytest.raises(ComplexError):
        rank(m, "R")


def sphere_height_complex(field):
    return build_witten_complex({0: ["min"], 2: ["max"]}, {}, field)


def test_witten_sphere_and_euler():
    for field in ("Z2", "Q"):
        c = sphere_height_complex(field)
        assert homology_ranks(c) == [1, 0, 1]
        assert c.euler_characteristic() == 2


def test_witten_rp2_orbit_level():
    # oriented counts: the two saddle->min lines cancel, the two max->saddle lines add
    gens = {0: ["m"], 1: ["s"], 2: ["M"]}
    q = build_witten_complex(gens, {("s", "m"): 0, ("M", "s"): 2}, "Q")
    z = build_witten_complex(gens, {("s", "m"): 0, ("M", "s"): 2}, "Z2")
    assert homology_ranks(q) == [1, 0, 0]
    assert homology_ranks(z) == [1, 1, 1]


def test_acyclic_complex():
    c = build_witten_complex({0: ["a"], 1: ["b"]}, {("b", "a"): 1}, "Q")
    assert homology_ranks(c) == [0, 0]
    assert c.euler_characteristic() == 0


def test_inconsistent_counts_raise():
    with pytest.raises(ComplexError):
        build_witten_complex({0: ["a"], 1: ["b"], 2: ["c"]}, {("b", "a"): 1, ("c", "b"): 1}, "Q")
    with pytest.raises(ComplexError):
        build_witten_complex({0: ["a"], 2: ["c"]}, {("c", "a"): 1}, "Q")
    with pytest.raises(ComplexError):
        build_witten_complex({0: ["a"], 1: ["a"]}, {}, "Q")


def unimodular(n, rng):
    U = np.eye(n, dtype=int)
    for _ in range(3 * n):
        i, j = rng.choice(n, 2, replace=False) if n > 1 else (0, 0)
        if i != j:
            U[i] += int(rng.integers(-2, 3)) * U[j]
    return U


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**31))
def test_property_betti_numbers_match_block_oracle(n0, n1, n2, seed):
    # d0 = U [A; 0], d1 = [0 B] U^-1 with U unimodular, so d1 d0 = 0 over Z
    rng = np.random.default_rng(seed)
    k = int(rng.integers(0, n1 + 1))
    A = rng.integers(-2, 3, size=(k, n0))
    B = rng.integers(-2, 3, size=(n2, n1 - k))
    U = unimodular(n1, rng)
    Uinv = np.round(np.linalg.inv(U)).astype(int)
    assert np.array_equal(U @ Uinv, np.eye(n1, dtype=int))
    d0 = U @ np.vstack([A, np.zeros((n1 - k, n0), dtype=int)])
    d1 = np.hstack([np.zeros((n2, k), dtype=int), B]) @ Uinv
    cplx = ChainComplexOverField("Q", {0: list(range(n0)), 1: list(range(n1)), 2: list(range(n2))}, {0: to_sparse(d0), 1: to_sparse(d1)})
    assert cplx.square_zero()
    rA = np.linalg.matrix_rank(A.astype(float)) if k else 0
    rB = np.linalg.matrix_rank(B.astype(float)) if n1 - k else 0
    b = homology_ranks(cplx)
    assert b == [n0 - rA, n1 - rA - rB, n2 - rB]
    assert b[0] - b[1] + b[2] == cplx.euler_characteristic()


# double complex


def trivial_dc(witten, points, n_max=3):
    return build_nerve_double_complex(1, [[0]], [list(range(sum(len(v) for v in points.values())))], points, witten, n_max)


def test_trivial_group_double_complex_equals_witten():
    points = {0: [0], 2: [1]}
    w = build_witten_complex(points, {}, "Q")
    dc = trivial_dc(w, points)
    assert total_cohomology(dc, 2) == homology_ranks(w)
    points = {0: [0, 1], 1: [2, 3], 2: [4]}
    counts = {(2, 0): 1, (2, 1): -1, (3, 0): 1, (3, 1): -1}
    w = build_witten_complex(points, counts, "Q")
    assert homology_ranks(w) == [1, 1, 1]
    assert total_cohomology(trivial_dc(w, points), 2) == [1, 1, 1]


def group_on_points(order, perm_of_generator):
    """Cyclic group Z/order acting on points by powers of one permutation."""
    cayley = [[(a + b) % order for b in range(order)] for a in range(order)]
    perms = [list(range(len(perm_of_generator)))]
    for _ in range(order - 1):
        perms.append([perm_of_generator[p] for p in perms[-1]])
    return cayley, perms


@pytest.mark.parametrize("order", [2, 3])
def test_group_cohomology_of_a_point_is_rational_point(order):
    cayley, perm = group_on_points(order, [0])
    points = {0: [0]}
    w = build_witten_complex(points, {}, "Q")
    dc = build_nerve_double_complex(order, cayley, perm, points, w, n_max=4)
    assert total_cohomology(dc, 3) == [1, 0, 0, 0]
    assert dc.block_dim(3, 0) == order**3


def test_free_orbit_gives_quotient():
    cayley, perm = group_on_points(2, [1, 0])
    points = {0: [0, 1]}
    w = build_witten_complex(points, {}, "Q")
    dc = build_nerve_double_complex(2, cayley, perm, points, w, n_max=3)
    assert total_cohomology(dc, 2) == [1, 0, 0]
    assert total_square_zero(dc, 2)
    assert dc.check_simplicial_identities()
    assert all(dc.check_identities().values())


def test_n_max_too_small():
    points = {0: [0]}
    w = build_witten_complex(points, {}, "Q")
    dc = build_nerve_double_complex(2, *group_on_points(2, [0]), points, w, n_max=2)
    with pytest.raises(ComplexError):
        total_cohomology(dc, 2)


def test_double_complex_needs_q_and_matching_generators():
    points = {0: [0]}
    with pytest.raises(ComplexError):
        build_nerve_double_complex(1, [[0]], [[0]], points, build_witten_complex(points, {}, "Z2"), 2)
    with pytest.raises(ComplexError):
        build_nerve_double_complex(1, [[0]], [[0]], {0: [5]}, build_witten_complex(points, {}, "Q"), 2)


def test_json_dump(tmp_path):
    points = {0: [0, 1]}
    w = build_witten_complex(points, {}, "Q")
    dc = build_nerve_double_complex(2, *group_on_points(2, [1, 0]), points, w, n_max=2)
    dump_json(dc, tmp_path / "dc.json")
    data = json.loads((tmp_path / "dc.json").read_text())
    assert data["generators"] == {"0,0": 2, "1,0": 4, "2,0": 8}
    c = build_witten_complex({0: ["a"], 1: ["b"]}, {("b", "a"): Fraction(-2)}, "Q")
    assert c.to_json()["differentials"]["0"]["entries"] == [[0, 0, -2, 1]]
