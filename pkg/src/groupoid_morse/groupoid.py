"""The action groupoid K x M over a level-set manifold."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .expr import Expression, eval_value
from .geometry import LevelSetManifold, normalize_columns, orthonormal_complement
from .symmetry import FiniteGroup, Symmetry, SymmetryError, TorusAction, isotropy


class GroupoidError(RuntimeError):
    pass


@dataclass(frozen=True)
class Arrow:
    """Arrow (g, x) from x to g.x; ``g`` is an element index or an angle vector."""

    g: object
    x: np.ndarray


@dataclass(frozen=True)
class NormalFrame:
    base: np.ndarray
    columns: np.ndarray

    @property
    def dim(self) -> int:
        return self.columns.shape[1]


@dataclass(frozen=True)
class BasicReport:
    max_deviation: float
    samples: int
    passed: bool


class ActionGroupoid:
    def __init__(self, manifold: LevelSetManifold, symmetry: Symmetry):
        if symmetry.ambient_dim != manifold.ambient_dim:
            raise GroupoidError("symmetry and manifold live in different dimensions")
        self.manifold = manifold
        self.symmetry = symmetry

    @property
    def is_finite(self) -> bool:
        return self.symmetry.is_finite

    # structural maps
    def source(self, a: Arrow) -> np.ndarray:
        return a.x

    def target(self, a: Arrow) -> np.ndarray:
        return self.symmetry.act(a.g, a.x)

    def unit(self, x) -> Arrow:
        x = np.asarray(x, dtype=float)
        if self.is_finite:
            return Arrow(self.symmetry.identity, x)
        return Arrow(np.zeros(self.symmetry.rank), x)

    def compose(self, second: Arrow, first: Arrow) -> Arrow:
        """second o first, defined when s(second) = t(first)."""
        if np.linalg.norm(np.asarray(second.x) - self.target(first)) > 1e-9:
            raise GroupoidError("arrows are not composable")
        if self.is_finite:
            return Arrow(self.symmetry.multiply(second.g, first.g), first.x)
        return Arrow(np.mod(np.asarray(second.g) + np.asarray(first.g), 2 * np.pi), first.x)

    def inverse(self, a: Arrow) -> Arrow:
        if self.is_finite:
            return Arrow(int(self.symmetry.inverse[a.g]), self.target(a))
        return Arrow(np.mod(-np.asarray(a.g), 2 * np.pi), self.target(a))

    def sample_arrows(self, n_points: int, per_point: int = 4, seed: int = 0, box: float = 2.0) -> list[Arrow]:
        rng = np.random.default_rng(seed)
        pts = self.manifold.sample_points(n_points, seed=seed, box=box)
        return [Arrow(g, x) for x in pts for g in self.symmetry.sample_elements(rng, per_point)]

    def conjugate(self, Q: np.ndarray) -> "ActionGroupoid":
        from .expr import compose_linear

        Q = np.asarray(Q, dtype=float)
        m = self.manifold
        cons = [compose_linear(c, Q.T) for c in m.constraints]
        man = LevelSetManifold(m.ambient_dim, cons, m.regularity_tol, m.projection_tol, m.max_iter)
        return ActionGroupoid(man, self.symmetry.conjugate(Q))


def check_basic(gpd: ActionGroupoid, f: Expression, samples: int = 40, seed: int = 0, box: float = 2.0, tol: float = 1e-8) -> BasicReport:
    """max |f(t(a)) - f(s(a))| over sampled arrows."""
    arrows = gpd.sample_arrows(samples, per_point=8, seed=seed, box=box)
    dev = 0.0
    for a in arrows:
        dev = max(dev, abs(eval_value(f, gpd.target(a)) - eval_value(f, gpd.source(a))))
    return BasicReport(dev, len(arrows), dev < tol)


def check_groupoid_axioms(gpd: ActionGroupoid, samples: int = 10, seed: int = 0, box: float = 2.0) -> dict:
    """Unit, inverse and associativity laws on sampled arrows.

    Element products are compared exactly for finite groups; points to 1e-12.
    """
    rng = np.random.default_rng(seed)
    pts = gpd.manifold.sample_points(samples, seed=seed, box=box)
    exact = gpd.is_finite
    worst = 0.0
    ok = True

    def same(a, b):
        nonlocal worst, ok
        d = float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))))
        worst = max(worst, d)
        if d > 1e-12:
            ok = False

    for x in pts:
        u = gpd.unit(x)
        same(gpd.source(u), x)
        same(gpd.target(u), x)
        g1, g2, g3 = gpd.symmetry.sample_elements(rng, 3) if not exact else rng.integers(0, gpd.symmetry.order, 3)
        if exact:
            g1, g2, g3 = int(g1), int(g2), int(g3)
        a1 = Arrow(g1, x)
        a2 = Arrow(g2, gpd.target(a1))
        a3 = Arrow(g3, gpd.target(a2))
        left = gpd.compose(a3, gpd.compose(a2, a1))
        right = gpd.compose(gpd.compose(a3, a2), a1)
        if exact:
            if left.g != right.g:
                ok = False
        else:
            same(np.mod(np.asarray(left.g) - np.asarray(right.g) + np.pi, 2 * np.pi) - np.pi, 0.0)
        inv = gpd.inverse(a1)
        same(gpd.source(inv), gpd.target(a1))
        same(gpd.target(inv), gpd.source(a1))
        inv2 = gpd.inverse(inv)
        if exact:
            if inv2.g != a1.g:
                ok = False
            same(inv2.x, a1.x)
    return {"passed": ok, "max_deviation": worst}


def orbit_tangent_frame(gpd: ActionGroupoid, x) -> np.ndarray:
    """Orthonormal basis (columns) of the tangent space of the orbit through x."""
    n = gpd.manifold.ambient_dim
    if gpd.is_finite:
        return np.zeros((n, 0))
    x = np.asarray(x, dtype=float)
    P = gpd.manifold.tangent_projector(x).matrix
    V = P @ gpd.symmetry.fundamental_fields(x)
    U, s, _ = np.linalg.svd(V, full_matrices=False)
    scale = max(1.0, float(np.linalg.norm(x)))
    r = int(np.sum(s > 1e-8 * scale))
    return normalize_columns(U[:, :r])


def normal_frame(gpd: ActionGroupoid, x) -> NormalFrame:
    x = np.asarray(x, dtype=float)
    T = gpd.manifold.tangent_frame(x)
    O = orbit_tangent_frame(gpd, x)
    F = orthonormal_complement(T, O)
    if F.shape[1] != T.shape[1] - O.shape[1]:
        raise GroupoidError("normal frame has the wrong dimension; tolerance failure")
    return NormalFrame(x, F)


def push_frame(gpd: ActionGroupoid, g, frame: NormalFrame) -> NormalFrame:
    """Frame at g.x obtained by pushing the columns with g."""
    M = gpd.symmetry.matrix(g)
    return NormalFrame(M @ frame.base, M @ frame.columns)


def normal_representation(gpd: ActionGroupoid, g, frame: NormalFrame, tol: float = 1e-8) -> np.ndarray:
    """Matrix of g acting on the normal space at a point it fixes."""
    M = gpd.symmetry.matrix(g)
    if np.linalg.norm(M @ frame.base - frame.base) >= tol:
        raise GroupoidError("element does not fix the base point")
    return frame.columns.T @ M @ frame.columns


def isotropy_elements(gpd: ActionGroupoid, x, samples: int = 6, seed: int = 0) -> list:
    """Finite isotropy elements; for tori the finite grid part plus samples of a full-torus stabilizer."""
    iso = isotropy(gpd.symmetry, x)
    if gpd.is_finite:
        return list(iso.elements)
    elems = [np.array(t) for t in iso.elements]
    if iso.dim == gpd.symmetry.rank:
        rng = np.random.default_rng(seed)
        elems += gpd.symmetry.sample_elements(rng, samples)
    return elems


def conjugate_presentation_check(gpd: ActionGroupoid, f: Expression, Q: np.ndarray, options=None, value_tol: float = 1e-8) -> dict:
    """Compare critical inventories of (M, K, f) and its conjugate by the orthogonal Q."""
    from .expr import compose_linear
    from .morse import SearchOptions, find_critical_orbits, inventory

    Q = np.asarray(Q, dtype=float)
    if np.linalg.norm(Q.T @ Q - np.eye(Q.shape[0])) >= 1e-10:
        raise SymmetryError("conjugating matrix is not orthogonal")
    options = options or SearchOptions()
    inv_a = inventory(find_critical_orbits(gpd, f, options))
    gq = gpd.conjugate(Q)
    fq = compose_linear(f, Q.T)
    inv_b = inventory(find_critical_orbits(gq, fq, options))
    same = len(inv_a) == len(inv_b) and all(
        abs(a[0] - b[0]) <= value_tol and a[1:] == b[1:] for a, b in zip(inv_a, inv_b)
    )
    return {"passed": same, "original": inv_a, "conjugated": inv_b}
