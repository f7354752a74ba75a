"""Exact cochain complexes over Z/2 and Q: Witten complexes and nerve-level double complexes."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Hashable, Iterable, Sequence

FIELDS = ("Z2", "Q")

# sparse matrices: {row: {col: value}} with int (Z2: 0/1) or Fraction entries
Sparse = dict


class ComplexError(RuntimeError):
    pass


def _check_field(field_tag: str):
    if field_tag not in FIELDS:
        raise ComplexError(f"unknown field {field_tag!r}; use one of {FIELDS}")


def _coerce(v, field_tag: str):
    if field_tag == "Z2":
        if isinstance(v, Fraction) and v.denominator != 1:
            raise ComplexError("non-integer entry in a Z/2 matrix")
        return int(v) % 2
    return Fraction(v)


def _add(m: Sparse, r: int, c: int, v, field_tag: str):
    row = m.setdefault(r, {})
    new = _coerce(row.get(c, 0) + v, field_tag)
    if new:
        row[c] = new
    else:
        row.pop(c, None)
        if not row:
            del m[r]


def sparse_mul(a: Sparse, b: Sparse, field_tag: str) -> Sparse:
    """a @ b for sparse row dicts."""
    out: Sparse = {}
    for r, row in a.items():
        acc: dict = {}
        for k, v in row.items():
            for c, w in b.get(k, {}).items():
                acc[c] = acc.get(c, 0) + v * w
        acc = {c: _coerce(v, field_tag) for c, v in acc.items()}
        acc = {c: v for c, v in acc.items() if v}
        if acc:
            out[r] = acc
    return out


def sparse_equal(a: Sparse, b: Sparse) -> bool:
    return {r: row for r, row in a.items() if row} == {r: row for r, row in b.items() if row}


def rank(m: Sparse, field_tag: str) -> int:
    """Exact rank: bit elimination over Z/2, fraction-free integer elimination over Q."""
    _check_field(field_tag)
    if field_tag == "Z2":
        basis: dict[int, int] = {}
        for row in m.values():
            bits = 0
            for c, v in row.items():
                if v % 2:
                    bits |= 1 << c
            while bits:
                top = bits.bit_length() - 1
                if top in basis:
                    bits ^= basis[top]
                else:
                    basis[top] = bits
                    break
        return len(basis)
    pivots: dict[int, dict[int, int]] = {}
    for row in m.values():
        den = math.lcm(*(Fraction(v).denominator for v in row.values())) if row else 1
        r = {c: int(Fraction(v) * den) for c, v in row.items() if v}
        while r:
            c = min(r)
            p = pivots.get(c)
            if p is None:
                pivots[c] = r
                break
            a, b = r[c], p[c]
            new = {}
            for k in set(r) | set(p):
                v = b * r.get(k, 0) - a * p.get(k, 0)
                if v:
                    new[k] = v
            g = math.gcd(*new.values()) if new else 1
            r = {k: v // g for k, v in new.items()}
    return len(pivots)


@dataclass
class ChainComplexOverField:
    """Cochain complex: ``differentials[d]`` maps degree d to d+1 (rows index degree d+1)."""

    field: str
    generators: dict[int, list] = field(default_factory=dict)
    differentials: dict[int, Sparse] = field(default_factory=dict)

    def __post_init__(self):
        _check_field(self.field)

    @property
    def top_degree(self) -> int:
        return max(self.generators, default=-1)

    def dim(self, d: int) -> int:
        return len(self.generators.get(d, []))

    def matrix(self, d: int) -> Sparse:
        return self.differentials.get(d, {})

    def square_zero(self) -> bool:
        for d in sorted(self.generators):
            if sparse_mul(self.matrix(d + 1), self.matrix(d), self.field):
                return False
        return True

    def euler_characteristic(self) -> int:
        return sum((-1) ** d * self.dim(d) for d in self.generators)

    def to_json(self) -> dict:
        return {
            "field": self.field,
            "generators": {str(d): [str(g) for g in self.generators[d]] for d in sorted(self.generators)},
            "differentials": {
                str(d): {
                    "shape": [self.dim(d + 1), self.dim(d)],
                    "entries": _entries(self.differentials[d]),
                }
                for d in sorted(self.differentials)
            },
        }


def _entries(m: Sparse) -> list:
    out = []
    for r in sorted(m):
        for c in sorted(m[r]):
            v = Fraction(m[r][c])
            out.append([r, c, v.numerator, v.denominator])
    return out


def homology_ranks(cplx: ChainComplexOverField, degrees: Iterable[int] | None = None) -> list[int]:
    """Betti numbers b_d = dim C^d - rank d_d - rank d_{d-1}, for d = 0..top (or the given degrees)."""
    degs = list(degrees) if degrees is not None else list(range(cplx.top_degree + 1))
    ranks: dict[int, int] = {}

    def rk(d):
        if d not in ranks:
            ranks[d] = rank(cplx.matrix(d), cplx.field) if cplx.dim(d) and cplx.dim(d + 1) else 0
        return ranks[d]

    return [cplx.dim(d) - rk(d) - rk(d - 1) for d in degs]


def build_witten_complex(
    generators: dict[int, Sequence[Hashable]],
    counts: dict[tuple[Hashable, Hashable], int | Fraction],
    field_tag: str,
) -> ChainComplexOverField:
    """Generators graded by index; ``counts[(hi, lo)]`` is the (signed) number of lines hi -> lo.

    The coboundary raises degree: (delta phi)(hi) = sum_lo counts[hi, lo] phi(lo).
    """
    _check_field(field_tag)
    gens = {d: list(g) for d, g in generators.items()}
    pos = {}
    for d, labels in gens.items():
        for j, lab in enumerate(labels):
            if lab in pos:
                raise ComplexError(f"duplicate generator {lab!r}")
            pos[lab] = (d, j)
    diffs: dict[int, Sparse] = {}
    for (hi, lo), n in counts.items():
        if hi not in pos or lo not in pos:
            continue
        (dh, rh), (dl, cl) = pos[hi], pos[lo]
        if dh != dl + 1:
            raise ComplexError(f"count between non-adjacent degrees {dl} -> {dh}")
        _add(diffs.setdefault(dl, {}), rh, cl, n, field_tag)
    cplx = ChainComplexOverField(field_tag, gens, diffs)
    if not cplx.square_zero():
        raise ComplexError("differential does not square to zero; flow-line counts are inconsistent")
    return cplx


# nerve double complex


@dataclass
class MorseDoubleComplex:
    """Grid C^{n,i} = Q^(K^n x Crit_i), 0 <= n <= n_max, with nerve and flow differentials.

    A basis element is (k, p) where k = (k_1, ..., k_n) encodes the composable
    string x -k_1-> k_1.x -k_2-> ... and p is a critical point; faces are
    d_0(k, p) = ((k_2..k_n), k_1.p), d_j composes k_{j+1} k_j, d_n drops k_n.
    """

    order: int
    cayley: list  # cayley[a][b] = index of a*b
    perm: list  # perm[g][p] = index of g.p
    points: dict[int, list[int]]  # degree -> critical point ids
    witten: ChainComplexOverField  # point-level, Q
    n_max: int
    _pos: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for d, pts in self.points.items():
            self._pos[d] = {p: j for j, p in enumerate(pts)}

    # bookkeeping
    def block_dim(self, n: int, i: int) -> int:
        return self.order**n * len(self.points.get(i, []))

    def elements(self, n: int, i: int):
        for ks in itertools.product(range(self.order), repeat=n):
            for p in self.points.get(i, []):
                yield ks, p

    def flat(self, n: int, i: int, ks: tuple, p: int) -> int:
        idx = 0
        for k in ks:
            idx = idx * self.order + k
        return idx * len(self.points[i]) + self._pos[i][p]

    def face(self, j: int, ks: tuple, p: int) -> tuple[tuple, int]:
        n = len(ks)
        if j == 0:
            return ks[1:], self.perm[ks[0]][p]
        if j == n:
            return ks[:-1], p
        return ks[: j - 1] + (self.cayley[ks[j]][ks[j - 1]],) + ks[j + 1 :], p

    # differentials
    def nerve_differential(self, n: int, i: int) -> Sparse:
        """delta-bar: C^{n-1,i} -> C^{n,i}, (delta-bar phi)(x) = sum_j (-1)^j phi(d_j x)."""
        m: Sparse = {}
        for ks, p in self.elements(n, i):
            r = self.flat(n, i, ks, p)
            for j in range(n + 1):
                fk, fp = self.face(j, ks, p)
                _add(m, r, self.flat(n - 1, i, fk, fp), (-1) ** j, "Q")
        return m

    def flow_differential(self, n: int, i: int) -> Sparse:
        """Witten coboundary on the Crit factor, identity on K^n: C^{n,i} -> C^{n,i+1}."""
        D = self.witten.matrix(i)
        m: Sparse = {}
        blocks = self.order**n
        rows_i1, cols_i = len(self.points.get(i + 1, [])), len(self.points.get(i, []))
        for b in range(blocks):
            for r, row in D.items():
                for c, v in row.items():
                    _add(m, b * rows_i1 + r, b * cols_i + c, v, "Q")
        return m

    def check_simplicial_identities(self) -> bool:
        for n in range(2, self.n_max + 1):
            for i in self.points:
                for ks, p in self.elements(n, i):
                    for a in range(n + 1):
                        for b in range(a + 1, n + 1):
                            lhs = self.face(a, *self.face(b, ks, p))
                            rhs = self.face(b - 1, *self.face(a, ks, p))
                            if lhs != rhs:
                                return False
        return True

    def check_identities(self) -> dict:
        """delta-bar^2 = 0, d^2 = 0 and delta-bar d = d delta-bar, exactly."""
        degs = sorted(self.points)
        nerve_sq = flow_sq = commute = True
        for i in degs:
            for n in range(2, self.n_max + 1):
                if sparse_mul(self.nerve_differential(n, i), self.nerve_differential(n - 1, i), "Q"):
                    nerve_sq = False
            for n in range(0, self.n_max + 1):
                if sparse_mul(self.flow_differential(n, i + 1), self.flow_differential(n, i), "Q"):
                    flow_sq = False
            for n in range(1, self.n_max + 1):
                a = sparse_mul(self.nerve_differential(n, i + 1), self.flow_differential(n - 1, i), "Q")
                b = sparse_mul(self.flow_differential(n, i), self.nerve_differential(n, i), "Q")
                if not sparse_equal(a, b):
                    commute = False
        return {"nerve_square_zero": nerve_sq, "flow_square_zero": flow_sq, "commute": commute}

    # total complex
    def _total_layout(self, d: int) -> list[tuple[int, int, int]]:
        """Blocks (n, i, offset) of total degree d."""
        out, off = [], 0
        for n in range(0, min(d, self.n_max) + 1):
            i = d - n
            if i in self.points and self.points[i]:
                out.append((n, i, off))
                off += self.block_dim(n, i)
        return out

    def total_dim(self, d: int) -> int:
        return sum(self.block_dim(n, i) for n, i, _ in self._total_layout(d))

    def total_differential(self, d: int) -> Sparse:
        """delta-bar + (-1)^n d from total degree d to d+1."""
        src = self._total_layout(d)
        dst = {(n, i): off for n, i, off in self._total_layout(d + 1)}
        m: Sparse = {}
        for n, i, off in src:
            if (n + 1, i) in dst and n + 1 <= self.n_max:
                for r, row in self.nerve_differential(n + 1, i).items():
                    for c, v in row.items():
                        _add(m, dst[(n + 1, i)] + r, off + c, v, "Q")
            if (n, i + 1) in dst:
                sgn = (-1) ** n
                for r, row in self.flow_differential(n, i).items():
                    for c, v in row.items():
                        _add(m, dst[(n, i + 1)] + r, off + c, sgn * v, "Q")
        return m

    def to_json(self) -> dict:
        return {
            "n_max": self.n_max,
            "group_order": self.order,
            "generators": {
                f"{n},{i}": self.block_dim(n, i) for n in range(self.n_max + 1) for i in sorted(self.points)
            },
            "witten": self.witten.to_json(),
        }


def build_nerve_double_complex(
    order: int,
    cayley,
    perm,
    points: dict[int, list[int]],
    witten: ChainComplexOverField,
    n_max: int,
    check: bool = True,
) -> MorseDoubleComplex:
    """``perm[g][p]`` is the critical point g.p; ``witten`` must be the point-level complex over Q
    with generators ordered as ``points``."""
    if witten.field != "Q":
        raise ComplexError("the double complex is built over Q")
    for d, pts in points.items():
        if list(witten.generators.get(d, [])) != list(pts):
            raise ComplexError("witten generators do not match the critical points")
    dc = MorseDoubleComplex(order, [list(map(int, r)) for r in cayley], [list(map(int, r)) for r in perm], points, witten, n_max)
    if check:
        ids = dc.check_identities()
        if not all(ids.values()):
            raise ComplexError(f"double complex identities fail: {ids}")
    return dc


def total_cohomology(dc: MorseDoubleComplex, up_to_degree: int) -> list[int]:
    if dc.n_max < up_to_degree + 1:
        raise ComplexError(f"n_max = {dc.n_max} cannot certify total degree {up_to_degree}; need n_max >= D + 1")
    ranks = {}

    def rk(d):
        if d < 0:
            return 0
        if d not in ranks:
            ranks[d] = rank(dc.total_differential(d), "Q")
        return ranks[d]

    return [dc.total_dim(d) - rk(d) - rk(d - 1) for d in range(up_to_degree + 1)]


def total_square_zero(dc: MorseDoubleComplex, up_to_degree: int) -> bool:
    return all(
        not sparse_mul(dc.total_differential(d + 1), dc.total_differential(d), "Q") for d in range(up_to_degree)
    )


def dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj.to_json(), fh, indent=2, sort_keys=True)
