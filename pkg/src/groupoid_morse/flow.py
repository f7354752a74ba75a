"""Negative gradient flow on level sets: integration, limits, shooting and flow-line signs."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.spatial.distance import directed_hausdorff

from .expr import DomainError, Expression, eval_value
from .geometry import GeometryError
from .groupoid import ActionGroupoid, normal_representation
from .morse import CriticalOrbit
from .symmetry import orbit_distance


class FlowError(RuntimeError):
    pass


class MonotonicityError(FlowError):
    pass


@dataclass(frozen=True)
class TrajectoryConfig:
    step: float = 1e-3
    max_time: float = 200.0
    capture_radius: float = 1e-3
    reprojection_tol: float = 1e-10
    critical_tol: float = 1e-8
    shoot_radius: float = 1e-3
    transport_chunk: float = 0.25
    fd_step: float = 1e-6

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("flow step must be positive")
        if not self.capture_radius > 10 * self.critical_tol:
            raise ValueError("capture radius must exceed 10 * critical_tol")

    def halved(self) -> "TrajectoryConfig":
        return replace(self, step=self.step / 2)


@dataclass
class Trajectory:
    points: np.ndarray
    values: np.ndarray
    step: float
    direction: int  # -1 descending, +1 ascending
    status: str  # "captured", "timeout", "stationary", "stopped"
    orbit: int | None = None  # captured orbit id
    point: int | None = None  # captured critical point (global index), finite orbits only

    @property
    def times(self) -> np.ndarray:
        return self.step * np.arange(len(self.points))


@dataclass
class FlowLine:
    hi: int
    lo: int
    start: int  # global critical point indices
    end: int
    points: np.ndarray = field(repr=False)  # descending order
    step: float
    seed: np.ndarray = field(repr=False)
    sign: int | None = None
    det: float | None = None
    integrated: bool = False  # points[1:] come from descending RK4 at ``step`` (reusable as transport base)

    @property
    def times(self) -> np.ndarray:
        return self.step * np.arange(len(self.points))


# fast vector field


class _Field:
    """Riemannian gradient and projection on plain Python lists (hot loop)."""

    def __init__(self, gpd: ActionGroupoid, f: Expression):
        m = gpd.manifold
        self.manifold = m
        self.n = m.ambient_dim
        self.fvg = f.compiled.value_grad
        self.cons = [c.compiled.value_grad for c in m.constraints]
        self.k = len(self.cons)
        self.tol = m.projection_tol
        self.max_iter = m.max_iter

    def grad(self, x: list) -> tuple[float, list]:
        v, g = self.fvg(*x)
        if self.k == 0:
            return v, g
        if self.k == 1:
            _, J = self.cons[0](*x)
            jj = sum(j * j for j in J)
            lam = sum(a * b for a, b in zip(J, g)) / jj
            return v, [a - lam * b for a, b in zip(g, J)]
        J = np.array([c(*x)[1] for c in self.cons])
        ga = np.array(g)
        lam = np.linalg.solve(J @ J.T, J @ ga)
        return v, (ga - J.T @ lam).tolist()

    def project(self, y: list) -> list:
        if self.k == 0:
            return y
        if self.k == 1:
            c0 = self.cons[0]
            for _ in range(self.max_iter):
                c, J = c0(*y)
                if abs(c) < self.tol:
                    return y
                s = c / sum(j * j for j in J)
                y = [a - s * b for a, b in zip(y, J)]
            raise FlowError("reprojection failed")
        try:
            return self.manifold.project(np.array(y)).tolist()
        except GeometryError as exc:
            raise FlowError("reprojection failed") from exc

    def rk4(self, x: list, h: float, s: float) -> list:
        _, k1 = self.grad(x)
        _, k2 = self.grad([a + 0.5 * h * s * b for a, b in zip(x, k1)])
        _, k3 = self.grad([a + 0.5 * h * s * b for a, b in zip(x, k2)])
        _, k4 = self.grad([a + h * s * b for a, b in zip(x, k3)])
        c = h * s / 6.0
        y = [a + c * (b1 + 2.0 * b2 + 2.0 * b3 + b4) for a, b1, b2, b3, b4 in zip(x, k1, k2, k3, k4)]
        return self.project(y)

    def run(self, x: list, nsteps: int, h: float, s: float) -> list:
        for _ in range(nsteps):
            x = self.rk4(x, h, s)
        return x


class CriticalIndex:
    """All known critical points, for capture tests."""

    def __init__(self, gpd: ActionGroupoid, f: Expression, orbits: list[CriticalOrbit], critical_tol: float = 1e-8):
        self.gpd = gpd
        self.orbits = orbits
        pts, owner, local = [], [], []
        self.offsets: dict[int, int] = {}
        self.torus_orbits = []
        spec = 0.0
        for o in orbits:
            if o.normal_spectrum:
                spec = max(spec, max(abs(m) for m in o.normal_spectrum))
            if o.gradient_norm >= 10 * critical_tol:
                continue
            if o.points:
                self.offsets[o.id] = len(pts)
                for j, p in enumerate(o.points):
                    pts.append(p)
                    owner.append(o.id)
                    local.append(j)
            else:
                self.torus_orbits.append(o)
        self.points = np.array(pts) if pts else np.zeros((0, gpd.manifold.ambient_dim))
        self.owner = owner
        self.local = local
        self.max_curvature = max(spec, 1.0)

    def __len__(self) -> int:
        return len(self.points)

    def point_index(self, orbit_id: int, local: int = 0) -> int:
        return self.offsets[orbit_id] + local

    def gate(self, radius: float) -> float:
        """Gradient norm above which no critical point can be within ``radius``."""
        return 4.0 * radius * self.max_curvature + 1e-9

    def locate(self, x, radius: float, exclude=()) -> tuple[int, int | None] | None:
        if len(self.points):
            d = np.linalg.norm(self.points - np.asarray(x), axis=1)
            if exclude:
                d[list(exclude)] = np.inf
            j = int(np.argmin(d))
            if d[j] < radius:
                return self.owner[j], j
        nx = float(np.linalg.norm(x))
        for o in self.torus_orbits:
            # orthogonal actions preserve norms, so ||x| - |p|| bounds the orbit distance from below
            if abs(nx - float(np.linalg.norm(o.representative))) < radius and (
                orbit_distance(self.gpd.symmetry, o.representative, x) < radius
            ):
                return o.id, None
        return None


def _integrate(
    fld: _Field,
    x0,
    cfg: TrajectoryConfig,
    direction: int,
    index: CriticalIndex | None = None,
    stop: Callable[[float], bool] | None = None,
    max_time: float | None = None,
) -> Trajectory:
    h = cfg.step
    s = float(direction)
    x = list(map(float, x0))
    try:
        x = fld.project(x)
        v, g = fld.grad(x)
    except (DomainError, ZeroDivisionError, OverflowError) as exc:
        raise FlowError(f"vector field undefined at start: {exc}") from exc
    pts = [x]
    vals = [v]
    radius = cfg.capture_radius
    exclude = set()
    if index is not None and len(index):
        d = np.linalg.norm(index.points - np.array(x), axis=1)
        exclude = set(np.nonzero(d < radius)[0].tolist())
    gate = index.gate(radius) if index is not None else 0.0
    gn = math.sqrt(sum(t * t for t in g))
    if gn < cfg.critical_tol:
        hit = index.locate(x, radius) if index is not None else None
        return Trajectory(np.array(pts), np.array(vals), h, direction, "stationary", *(hit or (None, None)))
    nsteps = int(round((max_time or cfg.max_time) / h))
    slack = 1e-12
    for _ in range(nsteps):
        try:
            x = fld.rk4(x, h, s)
            v, g = fld.grad(x)
        except (DomainError, ZeroDivisionError, OverflowError) as exc:
            raise FlowError(f"vector field undefined along trajectory: {exc}") from exc
        if s * (vals[-1] - v) > slack:
            raise MonotonicityError(f"f moved against the flow by {abs(v - vals[-1]):.3g}; step too large")
        pts.append(x)
        vals.append(v)
        if stop is not None and stop(v):
            return Trajectory(np.array(pts), np.array(vals), h, direction, "stopped")
        if index is None:
            continue
        gn = math.sqrt(sum(t * t for t in g))
        if exclude:
            d = np.linalg.norm(index.points[list(exclude)] - np.array(x), axis=1)
            exclude = {e for e, dd in zip(list(exclude), d) if dd < radius}
        if gn < gate:
            hit = index.locate(x, radius, exclude)
            if hit is not None:
                return Trajectory(np.array(pts), np.array(vals), h, direction, "captured", *hit)
    return Trajectory(np.array(pts), np.array(vals), h, direction, "timeout")


def integrate_flow(
    gpd: ActionGroupoid,
    f: Expression,
    x,
    cfg: TrajectoryConfig | None = None,
    orbits: list[CriticalOrbit] | None = None,
    direction: int = -1,
    max_time: float | None = None,
) -> Trajectory:
    """RK4 along -grad f (direction=-1) or +grad f, stopping on capture by a known critical point."""
    cfg = cfg or TrajectoryConfig()
    index = CriticalIndex(gpd, f, orbits, cfg.critical_tol) if orbits else None
    return _integrate(_Field(gpd, f), x, cfg, direction, index, max_time=max_time)


def flow_map(gpd: ActionGroupoid, f: Expression, x, tau: float, cfg: TrajectoryConfig | None = None) -> np.ndarray:
    cfg = cfg or TrajectoryConfig()
    fld = _Field(gpd, f)
    n = int(round(tau / cfg.step))
    return np.array(fld.run(fld.project(list(map(float, x))), n, cfg.step, -1.0))


def check_flow_equivariance(
    gpd: ActionGroupoid, f: Expression, samples: int = 8, cfg: TrajectoryConfig | None = None, tau: float = 1.0, seed: int = 0, box: float = 2.0
) -> float:
    """max |Phi_tau(g.x) - g.Phi_tau(x)| over sampled (g, x)."""
    cfg = cfg or TrajectoryConfig()
    rng = np.random.default_rng(seed)
    fld = _Field(gpd, f)
    n = int(round(tau / cfg.step))
    worst = 0.0
    for x in gpd.manifold.sample_points(samples, seed=seed, box=box):
        fx = np.array(fld.run(x.tolist(), n, cfg.step, -1.0))
        for g in gpd.symmetry.sample_elements(rng, 2):
            gx = gpd.symmetry.act(g, x)
            y = np.array(fld.run(gx.tolist(), n, cfg.step, -1.0))
            worst = max(worst, float(np.linalg.norm(y - gpd.symmetry.act(g, fx))))
    return worst


@dataclass(frozen=True)
class EndpointLimits:
    alpha: int | None
    omega: int | None
    alpha_point: int | None = None
    omega_point: int | None = None


def endpoint_limits(
    gpd: ActionGroupoid, f: Expression, x, orbits: list[CriticalOrbit], cfg: TrajectoryConfig | None = None
) -> EndpointLimits:
    """Orbit ids of the alpha- and omega-limits of x (None when unresolved)."""
    cfg = cfg or TrajectoryConfig()
    index = CriticalIndex(gpd, f, orbits, cfg.critical_tol)
    fld = _Field(gpd, f)
    down = _integrate(fld, x, cfg, -1, index)
    up = _integrate(fld, x, cfg, +1, index)
    return EndpointLimits(up.orbit, down.orbit, up.point, down.point)


@dataclass(frozen=True)
class RetractionReport:
    passed: bool
    samples: int
    failures: int
    time_bound: float
    rejected: str | None = None


def check_noncritical_retraction(
    gpd: ActionGroupoid,
    f: Expression,
    a: float,
    b: float,
    orbits: list[CriticalOrbit],
    samples: int = 12,
    cfg: TrajectoryConfig | None = None,
    seed: int = 0,
    box: float = 2.0,
) -> RetractionReport:
    """Every sampled point of f^{-1}[a, b] must flow below a within the estimated time bound."""
    cfg = cfg or TrajectoryConfig()
    if not a < b:
        raise ValueError("need a < b")
    for o in orbits:
        if a <= o.value <= b:
            return RetractionReport(False, 0, 0, 0.0, rejected=f"critical value {o.value:.6g} lies in [{a}, {b}]")
    fld = _Field(gpd, f)
    band = []
    for x in gpd.manifold.sample_points(40 * samples, seed=seed, box=box):
        if a <= eval_value(f, x) <= b:
            band.append(x)
            if len(band) == samples:
                break
    if not band:
        return RetractionReport(False, 0, 0, 0.0, rejected="no samples found in the band")
    g2 = min(float(np.sum(np.square(fld.grad(x.tolist())[1]))) for x in band)
    bound = 10.0 * (b - a) / max(g2, 1e-12)
    fails = 0
    for x in band:
        tr = _integrate(fld, x, cfg, -1, stop=lambda v: v <= a, max_time=bound)
        if tr.status != "stopped":
            fails += 1
    return RetractionReport(fails == 0, len(band), fails, bound)


# shooting


@dataclass
class ShootingResult:
    lines: list[FlowLine]
    shots: int
    unresolved: int
    self_index_violations: int
    captures: dict = field(default_factory=dict)  # orbit id -> count

    @property
    def unresolved_fraction(self) -> float:
        return self.unresolved / self.shots if self.shots else 0.0

    @property
    def passed(self) -> bool:
        return self.unresolved_fraction <= 0.01 and self.self_index_violations == 0


def _sphere_points(dim: int, n: int, rng: np.random.Generator) -> np.ndarray:
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    u = rng.normal(size=(n, dim))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def _hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    sa = a[:: max(1, len(a) // 400)]
    sb = b[:: max(1, len(b) // 400)]
    return max(directed_hausdorff(sa, sb)[0], directed_hausdorff(sb, sa)[0])


def enumerate_flow_lines(
    gpd: ActionGroupoid,
    f: Expression,
    orbits: list[CriticalOrbit],
    hi: CriticalOrbit,
    lo: CriticalOrbit,
    cfg: TrajectoryConfig | None = None,
    n_shoot: int = 2,
    signs: bool = True,
    seed: int = 0,
) -> ShootingResult:
    """Flow lines from the representative of ``hi`` (or into that of ``lo``) between adjacent-index orbits.

    Lines are found by shooting from whichever of the unstable sphere of ``hi``
    or the stable sphere of ``lo`` is zero-dimensional (its two points);
    ``n_shoot`` > 2 adds census shots on the unstable sphere of ``hi`` that
    only feed the transversality diagnostics.
    """
    cfg = cfg or TrajectoryConfig()
    if hi.index - lo.index != 1:
        raise FlowError("flow lines are enumerated between orbits of adjacent index")
    if not (hi.nondegenerate and lo.nondegenerate):
        raise FlowError("both orbits must be nondegenerate")
    if not gpd.is_finite or hi.orbit_dim or lo.orbit_dim:
        raise FlowError("flow-line enumeration needs a finite group and isolated critical orbits")
    dim = gpd.manifold.dim
    index = CriticalIndex(gpd, f, orbits, cfg.critical_tol)
    fld = _Field(gpd, f)
    eps = cfg.shoot_radius
    rng = np.random.default_rng(seed)
    found: list[FlowLine] = []
    shots = unresolved = violations = 0
    captures: dict[int, int] = {}

    def shoot(base, frame, direction):
        nonlocal shots, unresolved, violations
        for u in _sphere_points(frame.shape[1], n_shoot, rng):
            x0 = gpd.manifold.retract(base, eps * (frame @ u))
            tr = _integrate(fld, x0, cfg, direction, index)
            shots += 1
            if tr.status != "captured":
                unresolved += 1
                continue
            captures[tr.orbit] = captures.get(tr.orbit, 0) + 1
            yield x0, tr

    if hi.index == 1:
        start = index.point_index(hi.id)
        for x0, tr in shoot(hi.representative, hi.negative_frame, -1):
            o = _orbit(orbits, tr.orbit)
            if o.index >= hi.index:
                violations += 1
            if tr.orbit == lo.id:
                pts = np.vstack([hi.representative, tr.points])
                found.append(FlowLine(hi.id, lo.id, start, tr.point, pts, cfg.step, x0, integrated=True))
    elif dim - lo.index == 1:
        end = index.point_index(lo.id)
        for x0, tr in shoot(lo.representative, lo.positive_frame, +1):
            o = _orbit(orbits, tr.orbit)
            if o.index <= lo.index:
                violations += 1
            if tr.orbit == hi.id:
                pts = np.vstack([tr.points[::-1], lo.representative])
                found.append(FlowLine(hi.id, lo.id, tr.point, end, pts, cfg.step, x0))
    else:
        raise FlowError("shooting needs a zero-dimensional unstable sphere at hi or stable sphere at lo")
    if n_shoot > 2 and hi.index >= 2:
        # census only: generic seeds on the unstable sphere should not stall or climb
        for _, tr in shoot(hi.representative, hi.negative_frame, -1):
            if _orbit(orbits, tr.orbit).index >= hi.index:
                violations += 1

    lines = _cluster(found, 10 * eps)
    if signs:
        for line in lines:
            line.sign, line.det = sign_of_flow_line(gpd, f, line, orbits, cfg, index)
    return ShootingResult(lines, shots, unresolved, violations, captures)


def _orbit(orbits: list[CriticalOrbit], oid: int) -> CriticalOrbit:
    for o in orbits:
        if o.id == oid:
            return o
    raise KeyError(oid)


def _cluster(lines: list[FlowLine], tol: float) -> list[FlowLine]:
    out: list[FlowLine] = []
    for line in lines:
        if any(
            o.start == line.start and o.end == line.end and _hausdorff(o.points, line.points) < tol for o in out
        ):
            continue
        out.append(line)
    return out


# orientations and signs


def point_orientation(gpd: ActionGroupoid, orbit: CriticalOrbit, local: int) -> np.ndarray:
    """Oriented negative frame at orbit point ``local``: the representative's frame pushed by its element."""
    g = orbit.point_elements[local]
    return gpd.symmetry.matrix(g) @ orbit.negative_frame


def _orient_qr(W: np.ndarray) -> np.ndarray:
    """Orthonormalize columns keeping the orientation of their span."""
    if W.shape[1] == 0:
        return W
    Q, R = np.linalg.qr(W)
    s = np.sign(np.diag(R))
    s[s == 0] = 1.0
    return Q * s


def sign_of_flow_line(
    gpd: ActionGroupoid,
    f: Expression,
    line: FlowLine,
    orbits: list[CriticalOrbit],
    cfg: TrajectoryConfig | None = None,
    index: CriticalIndex | None = None,
) -> tuple[int | None, float]:
    """Transport the upper negative frame along the line and compare with [flow direction, lower frame].

    Returns (sign, determinant); sign is None when |det| < 1e-6.
    """
    cfg = cfg or TrajectoryConfig()
    index = index or CriticalIndex(gpd, f, orbits, cfg.critical_tol)
    hi, lo = _orbit(orbits, line.hi), _orbit(orbits, line.lo)
    o_hi = point_orientation(gpd, hi, index.local[line.start])
    o_lo = point_orientation(gpd, lo, index.local[line.end])
    fld = _Field(gpd, f)
    m = gpd.manifold
    P = line.points
    # skip the exact critical point at the head: transport starts at the first regular point
    k0 = 1 if np.linalg.norm(P[0] - hi.points[index.local[line.start]]) < 1e-14 else 0
    x = P[k0]
    W = _orient_qr(m.tangent_projector(x).matrix @ o_hi)
    chunk = max(1, int(round(cfg.transport_chunk / line.step)))
    delta = cfg.fd_step
    i = k0
    last = len(P) - 1
    if np.linalg.norm(P[-1] - lo.points[index.local[line.end]]) < 1e-14:
        last -= 1
    while i < last:
        n = min(chunk, last - i)
        xi = P[i].tolist()
        base = P[i + n] if line.integrated else np.array(fld.run(xi, n, line.step, -1.0))
        cols = []
        for w in W.T:
            xp = fld.project((P[i] + delta * w).tolist())
            cols.append((np.array(fld.run(xp, n, line.step, -1.0)) - base) / delta)
        W = _orient_qr(m.tangent_projector(base).matrix @ np.column_stack(cols))
        i += n
        x = base
    _, g = fld.grad(list(map(float, x)))
    u = -np.asarray(g)
    u /= np.linalg.norm(u)
    B = np.column_stack([u, m.tangent_projector(x).matrix @ o_lo])
    C = np.linalg.lstsq(B, W, rcond=None)[0]
    det = float(np.linalg.det(C))
    if abs(det) < 1e-6:
        return None, det
    return (1 if det > 0 else -1), det


def isotropy_orientation_sign(gpd: ActionGroupoid, orbit: CriticalOrbit, h: int) -> int:
    """+1 or -1: does isotropy element h preserve the orientation of the negative normal space?"""
    if orbit.index == 0:
        return 1
    R = normal_representation(gpd, h, orbit.frame)
    E = orbit.eigenvectors[:, : orbit.index]
    return 1 if np.linalg.det(E.T @ R @ E) > 0 else -1


def translate_line(gpd: ActionGroupoid, line: FlowLine, g: int, index: CriticalIndex) -> FlowLine:
    M = gpd.symmetry.matrix(g)
    pts = line.points @ M.T
    start = _nearest(index, M @ index.points[line.start])
    end = _nearest(index, M @ index.points[line.end])
    return FlowLine(line.hi, line.lo, start, end, pts, line.step, M @ line.seed, None, line.det)


def _nearest(index: CriticalIndex, x) -> int:
    d = np.linalg.norm(index.points - x, axis=1)
    j = int(np.argmin(d))
    if d[j] > 1e-6:
        raise FlowError("translated point is not a known critical point")
    return j


def saturate_lines(
    gpd: ActionGroupoid, lines: list[FlowLine], orbits: list[CriticalOrbit], index: CriticalIndex, tol: float = 1e-2
) -> list[FlowLine]:
    """All group translates of ``lines``, deduplicated, with signs relative to the pushed orientations."""
    G = gpd.symmetry
    out: list[FlowLine] = []
    for line in lines:
        hi, lo = _orbit(orbits, line.hi), _orbit(orbits, line.lo)
        for g in range(G.order):
            t = translate_line(gpd, line, g, index)
            if any(o.start == t.start and o.end == t.end and _hausdorff(o.points, t.points) < tol for o in out):
                continue
            if line.sign is not None:
                t.sign = line.sign * _correction(gpd, hi, index, line.start, t.start, g) * _correction(
                    gpd, lo, index, line.end, t.end, g
                )
            out.append(t)
    return out


def _correction(gpd: ActionGroupoid, orbit: CriticalOrbit, index: CriticalIndex, src: int, dst: int, g: int) -> int:
    G = gpd.symmetry
    a = orbit.point_elements[index.local[src]]
    b = orbit.point_elements[index.local[dst]]
    # h = b^-1 g a fixes the representative
    h = G.multiply(int(G.inverse[b]), G.multiply(g, a))
    return isotropy_orientation_sign(gpd, orbit, h)


def moduli_quotient(lines: list[FlowLine], gpd: ActionGroupoid, tol: float = 1e-2) -> list[list[int]]:
    """Classes of lines identified by some group element (indices into ``lines``)."""
    G = gpd.symmetry
    parent = list(range(len(lines)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, a in enumerate(lines):
        for g in (range(G.order) if G.is_finite else []):
            pts = a.points @ G.matrix(g).T
            for j, b in enumerate(lines):
                if find(i) != find(j) and len(b.points) and _hausdorff(pts, b.points) < tol:
                    parent[find(j)] = find(i)
    classes: dict[int, list[int]] = {}
    for i in range(len(lines)):
        classes.setdefault(find(i), []).append(i)
    return sorted(classes.values())


def write_trajectories_csv(path, trajectories: list[np.ndarray], step: float, every: int = 1):
    """CSV with columns seed_id, t, x1..xN."""
    n = trajectories[0].shape[1] if trajectories else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed_id", "t"] + [f"x{i + 1}" for i in range(n)])
        for sid, pts in enumerate(trajectories):
            for k in range(0, len(pts), every):
                w.writerow([sid, f"{k * step:.6g}"] + [f"{v:.12g}" for v in pts[k]])
