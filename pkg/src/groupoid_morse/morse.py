"""Critical orbits of basic functions: search, classification, local models, Morse polynomials."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .expr import DomainError, Expression, eval_value
from .geometry import GeometryError, normalize_columns
from .groupoid import (
    ActionGroupoid,
    GroupoidError,
    NormalFrame,
    isotropy_elements,
    normal_frame,
    normal_representation,
    orbit_tangent_frame,
)
from .symmetry import Isotropy, isotropy, orbit_distance, orbit_points_with_elements

log = logging.getLogger(__name__)


class MorseError(RuntimeError):
    pass


class KernelContainmentError(MorseError):
    pass


class SpectralGapError(MorseError):
    pass


@dataclass
class SearchOptions:
    n_starts: int = 48
    seed: int = 0
    gd_steps: int = 150
    newton_tol: float = 1e-8
    newton_iter: int = 50
    nondeg_tol: float = 1e-6
    box: float = 2.0
    cluster_tol: float = 1e-6


@dataclass
class CriticalOrbit:
    representative: np.ndarray
    value: float
    orbit_dim: int
    orbit_size: int | None  # None for positive-dimensional orbits
    isotropy: Isotropy
    normal_spectrum: tuple[float, ...]
    index: int
    stacky_index: int
    nondegenerate: bool
    orientable: bool
    gradient_norm: float
    frame: NormalFrame = field(repr=False)
    hessian: np.ndarray = field(repr=False)
    eigenvectors: np.ndarray = field(repr=False)  # columns, frame coordinates
    points: list = field(default_factory=list, repr=False)  # finite orbits: all points
    point_elements: list = field(default_factory=list, repr=False)
    id: int = -1

    @property
    def negative_frame(self) -> np.ndarray:
        """Ambient N x index basis of the negative normal eigenspace at the representative."""
        return normalize_columns(self.frame.columns @ self.eigenvectors[:, : self.index])

    @property
    def positive_frame(self) -> np.ndarray:
        return normalize_columns(self.frame.columns @ self.eigenvectors[:, self.index :])

    @property
    def isotropy_order(self) -> int | None:
        return self.isotropy.order


@dataclass(frozen=True)
class QuadraticModel:
    orbit: CriticalOrbit
    constant: float
    eigenvalues: np.ndarray
    frame: np.ndarray  # ambient eigenvector columns

    def __call__(self, v) -> float:
        c = self.frame.T @ np.asarray(v, dtype=float)
        return 0.5 * float(np.sum(self.eigenvalues * c * c))


def quadratic_model(orbit: CriticalOrbit) -> QuadraticModel:
    return QuadraticModel(
        orbit, orbit.value, np.array(orbit.normal_spectrum), orbit.frame.columns @ orbit.eigenvectors
    )


# search


def _grad_norm(gpd: ActionGroupoid, f: Expression, x) -> float:
    return float(np.linalg.norm(gpd.manifold.riemannian_gradient(f, x)))


def _descend(gpd: ActionGroupoid, f: Expression, x, steps: int, sign: float) -> np.ndarray:
    """Projected gradient descent (sign=+1) or ascent (sign=-1) with Armijo backtracking."""
    m = gpd.manifold
    alpha = 0.1
    fx = sign * eval_value(f, x)
    for _ in range(steps):
        g = m.riemannian_gradient(f, x)
        gg = float(g @ g)
        if gg < 1e-16:
            break
        while alpha > 1e-12:
            y = m.retract(x, -sign * alpha * g)
            fy = sign * eval_value(f, y)
            if fy <= fx - 1e-4 * alpha * gg:
                x, fx = y, fy
                alpha = min(alpha * 1.5, 10.0)
                break
            alpha *= 0.5
        else:
            break
    return x


def _newton(gpd: ActionGroupoid, f: Expression, x, tol: float, max_iter: int) -> np.ndarray | None:
    """Riemannian Newton on the level set; least-squares steps handle Morse-Bott kernels."""
    m = gpd.manifold
    for _ in range(max_iter):
        g = m.riemannian_gradient(f, x)
        gn = float(np.linalg.norm(g))
        if gn < tol:
            return _polish(gpd, f, x, gn)
        Q = m.tangent_frame(x)
        H = m.riemannian_hessian(f, x, Q)
        d = np.linalg.lstsq(H, -(Q.T @ g), rcond=1e-10)[0]
        step = Q @ d
        sn = float(np.linalg.norm(step))
        if not math.isfinite(sn):
            return None
        if sn > 0.5:
            step *= 0.5 / sn
        x = m.retract(x, step)
    return x if _grad_norm(gpd, f, x) < tol else None


def _polish(gpd: ActionGroupoid, f: Expression, x, gn: float) -> np.ndarray:
    """Extra Newton steps past the tolerance, kept while they reduce the gradient."""
    m = gpd.manifold
    for _ in range(3):
        if gn < 1e-14:
            break
        Q = m.tangent_frame(x)
        H = m.riemannian_hessian(f, x, Q)
        g = m.riemannian_gradient(f, x)
        y = m.retract(x, Q @ np.linalg.lstsq(H, -(Q.T @ g), rcond=1e-10)[0])
        gy = _grad_norm(gpd, f, y)
        if gy >= gn:
            break
        x, gn = y, gy
    return x


def _candidates(gpd: ActionGroupoid, f: Expression, opt: SearchOptions) -> list[np.ndarray]:
    seeds = gpd.manifold.sample_points(opt.n_starts, seed=opt.seed, box=opt.box)
    out = []
    dropped = 0
    for s in seeds:
        for start in (s, _descend(gpd, f, s, opt.gd_steps, 1.0), _descend(gpd, f, s, opt.gd_steps, -1.0)):
            try:
                x = _newton(gpd, f, start, opt.newton_tol, opt.newton_iter)
            except (GeometryError, DomainError, np.linalg.LinAlgError):
                x = None
            if x is None:
                dropped += 1
                continue
            out.append(x)
    if dropped:
        log.warning("dropped %d candidates whose Newton refinement did not converge", dropped)
    return out


def _lex_key(p: np.ndarray) -> tuple:
    return tuple(np.round(p, 9) + 0.0)


def _same_orbit(gpd: ActionGroupoid, f: Expression, a, b, fa: float, fb: float, tol: float) -> bool:
    if abs(fa - fb) > 1e-6 * max(1.0, abs(fa)):
        return False
    return orbit_distance(gpd.symmetry, a, b) < tol


def find_critical_orbits(gpd: ActionGroupoid, f: Expression, options: SearchOptions | None = None) -> list[CriticalOrbit]:
    opt = options or SearchOptions()
    cands = _candidates(gpd, f, opt)
    if not cands:
        raise MorseError("critical search found no candidates")
    clusters: list[list] = []  # [rep, value, members]
    for x in cands:
        fx = eval_value(f, x)
        for c in clusters:
            if _same_orbit(gpd, f, c[0], x, c[1], fx, opt.cluster_tol):
                c[2].append(x)
                break
        else:
            clusters.append([x, fx, [x]])
    orbits = []
    for rep, _, members in clusters:
        if gpd.is_finite:
            pool = orbit_points_with_elements(gpd.symmetry, rep)[0]
        else:
            pool = members
        rep = min(pool, key=_lex_key)
        orbits.append(classify_critical_point(gpd, f, rep, opt))
    orbits.sort(key=lambda o: (round(o.value, 9), o.index, o.orbit_size if o.orbit_size is not None else math.inf))
    for i, o in enumerate(orbits):
        o.id = i
    return orbits


def classify_critical_point(gpd: ActionGroupoid, f: Expression, x, options: SearchOptions | None = None) -> CriticalOrbit:
    opt = options or SearchOptions()
    x = np.asarray(x, dtype=float)
    gn = _grad_norm(gpd, f, x)
    if gn >= 10 * opt.newton_tol:
        raise MorseError(f"point is not critical (gradient norm {gn:.3g})")
    frame = normal_frame(gpd, x)
    H = _normal_hessian_at(gpd, f, x, frame)
    mu, V = np.linalg.eigh(H)
    V = normalize_columns(V)
    nondeg = bool(mu.size == 0 or np.min(np.abs(mu)) > opt.nondeg_tol)
    index = int(np.sum(mu < -opt.nondeg_tol))
    iso = isotropy(gpd.symmetry, x)
    orbit_dim = orbit_tangent_frame(gpd, x).shape[1]
    if gpd.is_finite:
        pts, via = orbit_points_with_elements(gpd.symmetry, x)
        size = len(pts)
    else:
        # a torus orbit through a fixed point is that point
        pts, via, size = [], [], (1 if orbit_dim == 0 else None)
    orbit = CriticalOrbit(
        representative=x,
        value=eval_value(f, x),
        orbit_dim=orbit_dim,
        orbit_size=size,
        isotropy=iso,
        normal_spectrum=tuple(float(m) for m in mu),
        index=index,
        stacky_index=index - iso.dim,
        nondegenerate=nondeg,
        orientable=True,
        gradient_norm=gn,
        frame=frame,
        hessian=H,
        eigenvectors=V,
        points=pts,
        point_elements=via,
    )
    if nondeg:
        orbit.orientable = negative_orientability(gpd, f, orbit)
    return orbit


def inventory(orbits: list[CriticalOrbit]) -> list[tuple]:
    """Sorted multiset of (value, index, orbit size, isotropy order, orientable)."""
    return sorted(
        (round(o.value, 10), o.index, o.orbit_size, o.isotropy.finite_order, o.isotropy.dim, o.orientable)
        for o in orbits
    )


# classification pieces


def _normal_hessian_at(gpd: ActionGroupoid, f: Expression, x, frame: NormalFrame, tol: float = 1e-6) -> np.ndarray:
    m = gpd.manifold
    Hamb = m.ambient_lagrangian_hessian(f, x)
    O = orbit_tangent_frame(gpd, x)
    if O.shape[1]:
        T = m.tangent_frame(x)
        leak = float(np.max(np.abs(O.T @ Hamb @ T)))
        if leak >= tol * max(1.0, float(np.max(np.abs(Hamb)))):
            raise KernelContainmentError(f"orbit directions are not in the Hessian kernel (|H(v,w)| = {leak:.3g})")
    F = frame.columns
    H = F.T @ Hamb @ F
    return 0.5 * (H + H.T)


def normal_hessian(gpd: ActionGroupoid, f: Expression, orbit: CriticalOrbit) -> np.ndarray:
    return _normal_hessian_at(gpd, f, orbit.representative, orbit.frame)


def check_hessian_normal_invariance(gpd: ActionGroupoid, f: Expression, orbit: CriticalOrbit) -> float:
    H = orbit.hessian
    worst = 0.0
    for g in isotropy_elements(gpd, orbit.representative):
        R = normal_representation(gpd, g, orbit.frame)
        worst = max(worst, float(np.linalg.norm(R.T @ H @ R - H)))
    return worst


def negative_orientability(gpd: ActionGroupoid, f: Expression, orbit: CriticalOrbit, gap_tol: float = 1e-8) -> bool:
    mu = np.array(orbit.normal_spectrum)
    neg, pos = mu[mu < 0], mu[mu >= 0]
    if neg.size and pos.size and float(pos.min() - neg.max()) < gap_tol:
        raise SpectralGapError("negative and positive normal spectrum are not separated")
    if neg.size == 0:
        return True
    E = orbit.eigenvectors[:, : neg.size]
    for g in orbit.isotropy.elements:
        g = g if gpd.is_finite else np.array(g)
        R = normal_representation(gpd, g, orbit.frame)
        if np.linalg.det(E.T @ R @ E) <= 0:
            return False
    # identity components of a torus stabilizer are connected, hence orientation preserving
    return True


@dataclass(frozen=True)
class LocalModelFit:
    slope: float
    radii: tuple[float, ...]
    errors: tuple[float, ...]
    exact: bool

    @property
    def passed(self) -> bool:
        return self.exact or self.slope >= 2.7


def verify_local_model(
    gpd: ActionGroupoid,
    f: Expression,
    orbit: CriticalOrbit,
    radii=(1e-1, 3e-2, 1e-2, 3e-3, 1e-3),
    n_dirs: int = 8,
    seed: int = 0,
) -> LocalModelFit:
    """Fit the decay exponent of |f(retract(x, v)) - c - Q(v)| as |v| -> 0."""
    if not orbit.nondegenerate:
        raise MorseError("local model needs a nondegenerate orbit")
    rng = np.random.default_rng(seed)
    F = orbit.frame.columns
    if F.shape[1] == 0:
        return LocalModelFit(math.inf, tuple(radii), tuple(0.0 for _ in radii), True)
    dirs = rng.normal(size=(n_dirs, F.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    x, c, H = orbit.representative, orbit.value, orbit.hessian
    errs = []
    for k, r in enumerate(radii):
        e = 0.0
        for u in dirs:
            try:
                y = gpd.manifold.retract(x, r * (F @ u))
            except GeometryError as exc:
                if k == 0:
                    raise MorseError("retraction failed at the largest radius") from exc
                raise
            e = max(e, abs(eval_value(f, y) - c - 0.5 * r * r * float(u @ H @ u)))
        errs.append(e)
    floor = 1e-13 * max(1.0, abs(c))
    if max(errs) < floor:
        return LocalModelFit(math.inf, tuple(radii), tuple(errs), True)
    lr = np.log(np.asarray(radii))
    le = np.log(np.maximum(errs, 1e-300))
    # points at the roundoff floor carry no slope information
    keep = np.asarray(errs) > floor
    if keep.sum() < 2:
        return LocalModelFit(math.inf, tuple(radii), tuple(errs), True)
    slope = float(np.polyfit(lr[keep], le[keep], 1)[0])
    return LocalModelFit(slope, tuple(radii), tuple(errs), False)


# polynomials


def morse_polynomial(orbits: list[CriticalOrbit]) -> list[int]:
    """Coefficient list of sum over orientable nondegenerate orbits of t^index."""
    coeffs: list[int] = []
    for o in orbits:
        if o.orbit_dim > 0 or o.isotropy.dim > 0:
            raise MorseError("Morse polynomials are only defined here for finite symmetry groups")
        if not (o.nondegenerate and o.orientable):
            continue
        while len(coeffs) <= o.index:
            coeffs.append(0)
        coeffs[o.index] += 1
    return coeffs or [0]


def _trim(p: list[int]) -> list[int]:
    p = list(p)
    while len(p) > 1 and p[-1] == 0:
        p.pop()
    return p or [0]


@dataclass(frozen=True)
class InequalityResult:
    remainder: tuple[int, ...] | None
    exact: bool
    nonnegative: bool
    lacunary: bool
    lacunary_consistent: bool

    @property
    def passed(self) -> bool:
        return self.exact and self.nonnegative


def divide_by_one_plus_t(d: list[int]) -> list[int] | None:
    """Exact quotient of an integer polynomial by (1 + t), or None."""
    d = _trim(d)
    if d == [0]:
        return [0]
    if len(d) == 1:
        return None
    q = [0] * (len(d) - 1)
    q[0] = d[0]
    for k in range(1, len(q)):
        q[k] = d[k] - q[k - 1]
    return q if q[-1] == d[-1] else None


def check_morse_inequalities(M: list[int], P: list[int]) -> InequalityResult:
    n = max(len(M), len(P))
    D = [(M[k] if k < len(M) else 0) - (P[k] if k < len(P) else 0) for k in range(n)]
    R = divide_by_one_plus_t(D)
    exact = R is not None
    nonneg = exact and all(r >= 0 for r in R)
    Mt = _trim(M)
    lac = not any(Mt[k] and Mt[k + 1] for k in range(len(Mt) - 1))
    return InequalityResult(
        tuple(_trim(R)) if exact else None,
        exact,
        nonneg,
        lac,
        (not lac) or Mt == _trim(P),
    )


def poly_to_text(p: list[int]) -> str:
    terms = []
    for k, c in enumerate(p):
        if c == 0:
            continue
        mono = "" if k == 0 else ("t" if k == 1 else f"t^{k}")
        coef = str(c) if (c != 1 or k == 0) else ""
        terms.append(coef + mono)
    return " + ".join(terms) if terms else "0"
