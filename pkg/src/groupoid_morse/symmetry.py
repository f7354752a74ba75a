"""Finite orthogonal groups and torus actions by integer-weight rotations."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.optimize

from .expr import Expression, average, compose_linear

DEDUP_TOL = 1e-8


class SymmetryError(ValueError):
    pass


@dataclass(frozen=True)
class Isotropy:
    """Stabilizer of a point.

    ``elements`` lists group element indices (finite groups) or the sampled
    angle vectors of the finite part (tori).  ``dim`` is 0 for finite groups.
    """

    dim: int
    finite_order: int
    elements: tuple = field(default=(), repr=False)

    @property
    def order(self) -> int | None:
        """Group order, or None for a positive-dimensional stabilizer."""
        return self.finite_order if self.dim == 0 else None


class FiniteGroup:
    is_finite = True

    def __init__(self, elements: Sequence[np.ndarray], name: str = ""):
        self.elements = [np.array(g, dtype=float) for g in elements]
        self.ambient_dim = self.elements[0].shape[0]
        self.name = name
        n = len(self.elements)
        ident = [i for i, g in enumerate(self.elements) if np.allclose(g, np.eye(self.ambient_dim), atol=DEDUP_TOL)]
        if not ident:
            raise SymmetryError("group does not contain the identity")
        self.identity = ident[0]
        stack = np.array(self.elements)
        self.cayley = np.empty((n, n), dtype=int)
        for i, a in enumerate(self.elements):
            prods = np.einsum("ij,kjl->kil", a, stack)
            for j in range(n):
                k = _find(stack, prods[j])
                if k < 0:
                    raise SymmetryError("element set is not closed under products")
                self.cayley[i, j] = k
        self.inverse = np.array([int(np.nonzero(self.cayley[i] == self.identity)[0][0]) for i in range(n)])

    @property
    def order(self) -> int:
        return len(self.elements)

    def matrix(self, g: int) -> np.ndarray:
        return self.elements[g]

    def act(self, g: int, x) -> np.ndarray:
        return self.elements[g] @ np.asarray(x, dtype=float)

    def multiply(self, a: int, b: int) -> int:
        return int(self.cayley[a, b])

    def sample_elements(self, rng: np.random.Generator, n: int) -> list[int]:
        return list(range(self.order)) if n >= self.order else [int(i) for i in rng.choice(self.order, n, replace=False)]

    def conjugate(self, Q: np.ndarray) -> "FiniteGroup":
        return FiniteGroup([Q @ g @ Q.T for g in self.elements], name=self.name)

    def __repr__(self) -> str:
        return f"FiniteGroup(order={self.order}, N={self.ambient_dim}{', ' + self.name if self.name else ''})"


def _find(stack: np.ndarray, m: np.ndarray, tol: float = DEDUP_TOL) -> int:
    d = np.abs(stack - m).reshape(len(stack), -1).max(axis=1)
    k = int(np.argmin(d))
    return k if d[k] < tol else -1


def _check_orthogonal(g: np.ndarray):
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise SymmetryError("generator must be a square matrix")
    if np.linalg.norm(g.T @ g - np.eye(g.shape[0])) >= 1e-10:
        raise SymmetryError("generator is not orthogonal")


def close_group(generators: Sequence[np.ndarray], cap: int = 512, name: str = "") -> FiniteGroup:
    gens = [np.array(g, dtype=float) for g in generators]
    if not gens:
        raise SymmetryError("need at least one generator (use the identity for the trivial group)")
    n = gens[0].shape[0]
    for g in gens:
        _check_orthogonal(g)
        if g.shape[0] != n:
            raise SymmetryError("generators have different sizes")
    elements = [np.eye(n)]
    frontier = [np.eye(n)]
    while frontier:
        new = []
        for a in frontier:
            for g in gens:
                p = g @ a
                if _find(np.array(elements), p) < 0:
                    elements.append(p)
                    new.append(p)
                    if len(elements) > cap:
                        raise SymmetryError(f"group order exceeds cap {cap}")
        frontier = new
    return FiniteGroup(elements, name=name)


def rotation_z(angle: float, n: int = 3) -> np.ndarray:
    R = np.eye(n)
    c, s = np.cos(angle), np.sin(angle)
    R[0, 0], R[0, 1], R[1, 0], R[1, 1] = c, -s, s, c
    return R


def reflection(normal: Sequence[float]) -> np.ndarray:
    v = np.asarray(normal, dtype=float)
    v = v / np.linalg.norm(v)
    return np.eye(v.size) - 2.0 * np.outer(v, v)


def trivial_group(n: int) -> FiniteGroup:
    return FiniteGroup([np.eye(n)], name="trivial")


def finite_preset(spec: str, n: int) -> FiniteGroup:
    """Named finite groups: ``trivial``, ``antipodal``, ``cyclic_z k``, ``dihedral k``, ``reflect i``."""
    parts = spec.split()
    key = parts[0] if parts else ""
    try:
        arg = int(parts[1]) if len(parts) > 1 else None
    except ValueError as exc:
        raise SymmetryError(f"bad preset argument in {spec!r}") from exc
    if key == "trivial":
        return trivial_group(n)
    if key == "antipodal":
        return close_group([-np.eye(n)], name=spec)
    if key in ("cyclic_z", "dihedral"):
        if arg is None or arg < 1 or n < 2:
            raise SymmetryError(f"{key} needs an order >= 1 and N >= 2")
        gens = [rotation_z(2 * np.pi / arg, n)]
        if key == "dihedral":
            gens.append(reflection([0.0, 1.0] + [0.0] * (n - 2)))
        return close_group(gens, name=spec)
    if key == "reflect":
        if arg is None or not 1 <= arg <= n:
            raise SymmetryError("reflect needs a coordinate index 1..N")
        e = np.zeros(n)
        e[arg - 1] = 1.0
        return close_group([reflection(e)], name=spec)
    raise SymmetryError(f"unknown finite group preset {spec!r}")


class TorusAction:
    """Action of T^m by exp(sum theta_i A_i) for commuting integer-frequency skew generators."""

    is_finite = False

    def __init__(self, generators: Sequence[np.ndarray], name: str = ""):
        gens = [np.array(a, dtype=float) for a in generators]
        if not gens:
            raise SymmetryError("torus needs at least one generator")
        for a in gens:
            if a.shape != gens[0].shape or a.shape[0] != a.shape[1]:
                raise SymmetryError("generators must be square and of equal size")
            if np.linalg.norm(a + a.T) >= 1e-12:
                raise SymmetryError("generator is not skew-symmetric")
            if np.linalg.norm(scipy.linalg.expm(2 * np.pi * a) - np.eye(a.shape[0])) >= 1e-8:
                raise SymmetryError("generator is not 2*pi-periodic (non-integer frequency)")
        for i in range(len(gens)):
            for j in range(i + 1, len(gens)):
                if np.linalg.norm(gens[i] @ gens[j] - gens[j] @ gens[i]) >= 1e-10:
                    raise SymmetryError("torus generators do not commute")
        self.generators = gens
        self.ambient_dim = gens[0].shape[0]
        self.name = name
        freqs = [np.abs(np.linalg.eigvals(a).imag) for a in gens]
        self.max_frequency = max(1, int(round(max(float(f.max()) for f in freqs))))

    @property
    def rank(self) -> int:
        return len(self.generators)

    def matrix(self, theta) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        return scipy.linalg.expm(sum(t * a for t, a in zip(theta, self.generators)))

    def act(self, theta, x) -> np.ndarray:
        return self.matrix(theta) @ np.asarray(x, dtype=float)

    def fundamental_fields(self, x) -> np.ndarray:
        """Columns A_i x."""
        x = np.asarray(x, dtype=float)
        return np.column_stack([a @ x for a in self.generators])

    def sample_elements(self, rng: np.random.Generator, n: int) -> list[np.ndarray]:
        return [rng.uniform(0, 2 * np.pi, self.rank) for _ in range(n)]

    def conjugate(self, Q: np.ndarray) -> "TorusAction":
        return TorusAction([Q @ a @ Q.T for a in self.generators], name=self.name)

    def __repr__(self) -> str:
        return f"TorusAction(rank={self.rank}, N={self.ambient_dim})"


def torus_preset(spec: str, n: int) -> TorusAction:
    if spec.strip() == "rotation_z":
        if n < 2:
            raise SymmetryError("rotation_z needs N >= 2")
        a = np.zeros((n, n))
        a[0, 1], a[1, 0] = -1.0, 1.0
        return TorusAction([a], name=spec)
    raise SymmetryError(f"unknown torus preset {spec!r}")


Symmetry = FiniteGroup | TorusAction


def act(group: Symmetry, g, x) -> np.ndarray:
    return group.act(g, x)


def orbit_points_with_elements(group: FiniteGroup, x, tol: float = DEDUP_TOL) -> tuple[list[np.ndarray], list[int]]:
    """Deduplicated orbit points and, for each, the first element reaching it."""
    x = np.asarray(x, dtype=float)
    pts: list[np.ndarray] = []
    via: list[int] = []
    for i in range(group.order):
        y = group.act(i, x)
        if all(np.linalg.norm(y - p) >= tol for p in pts):
            pts.append(y)
            via.append(i)
    return pts, via


def orbit_points(group: FiniteGroup, x, tol: float = DEDUP_TOL) -> list[np.ndarray]:
    if not group.is_finite:
        raise SymmetryError("orbit_points needs a finite group")
    return orbit_points_with_elements(group, x, tol)[0]


def isotropy(group: Symmetry, x, tol: float = DEDUP_TOL) -> Isotropy:
    x = np.asarray(x, dtype=float)
    if group.is_finite:
        idx = [i for i in range(group.order) if np.linalg.norm(group.act(i, x) - x) < tol]
        s = set(idx)
        for a in idx:
            if int(group.inverse[a]) not in s or any(int(group.cayley[a, b]) not in s for b in idx):
                raise SymmetryError("isotropy set is not a subgroup; tolerance too loose")
        return Isotropy(0, len(idx), tuple(idx))
    V = group.fundamental_fields(x)
    scale = max(1.0, float(np.linalg.norm(x)))
    rank = int(np.linalg.matrix_rank(V, tol=1e-8 * scale)) if V.size else 0
    dim = group.rank - rank
    # finite part: grid of angles 2*pi*j/F fixing x
    F = group.max_frequency
    fixed = []
    for j in np.ndindex(*(F,) * group.rank):
        theta = 2 * np.pi * np.array(j, dtype=float) / F
        if np.linalg.norm(group.act(theta, x) - x) < tol:
            fixed.append(theta)
    finite = max(1, int(round(len(fixed) / F**dim)))
    return Isotropy(dim, finite, tuple(tuple(t) for t in fixed) if dim == 0 else ())


def orbit_distance(group: Symmetry, x, y) -> float:
    """min over g of |g.x - y|."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if group.is_finite:
        return min(float(np.linalg.norm(group.act(i, x) - y)) for i in range(group.order))
    m = group.rank
    grid = 24 if m == 1 else 12
    best = None
    for j in np.ndindex(*(grid,) * m):
        theta = 2 * np.pi * np.array(j, dtype=float) / grid
        d = float(np.linalg.norm(group.act(theta, x) - y))
        if best is None or d < best[0]:
            best = (d, theta)
    res = scipy.optimize.minimize(
        lambda th: float(np.sum((group.act(th, x) - y) ** 2)), best[1], method="BFGS", options={"gtol": 1e-14}
    )
    return float(min(best[0], np.sqrt(max(res.fun, 0.0))))


def haar_average(group: Symmetry, f: Expression, quadrature: int = 16) -> Expression:
    """Average f over the group; for tori by the trapezoid rule on a quadrature^rank grid."""
    if group.is_finite:
        mats = group.elements
    else:
        mats = [
            group.matrix(2 * np.pi * np.array(j, dtype=float) / quadrature)
            for j in np.ndindex(*(quadrature,) * group.rank)
        ]
    # round away roundoff in the matrices so exact zeros stay exact
    return average([compose_linear(f, np.where(np.abs(M) < 1e-15, 0.0, M)) for M in mats])


def preserves_manifold(group: Symmetry, manifold, samples: int = 100, seed: int = 0, tol: float = 1e-9, box: float = 2.0) -> float:
    """Max constraint residual of g.x over sampled on-manifold x; raises when above tol."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    pts = manifold.sample_points(samples, seed=seed, box=box)
    for x in pts:
        for g in group.sample_elements(rng, 8):
            r = manifold.residual(group.act(g, x))
            worst = max(worst, float(np.linalg.norm(r)) if r.size else 0.0)
    if worst >= tol:
        raise SymmetryError(f"action does not preserve the manifold (residual {worst:.3g})")
    return worst
