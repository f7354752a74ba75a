"""Compact manifolds as regular level sets in R^N with the induced metric."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.stats import qmc

from .expr import Expression, eval_jet2, eval_value, eval_value_grad, parse_expression


class GeometryError(RuntimeError):
    pass


class ProjectionError(GeometryError):
    pass


class RankDeficiencyError(GeometryError):
    pass


@dataclass(frozen=True)
class TangentProjector:
    base: np.ndarray
    matrix: np.ndarray


class LevelSetManifold:
    """Zero set of ``constraints`` in R^N, assumed regular and compact.

    Compactness is the scenario author's responsibility; it is not checked.
    """

    def __init__(
        self,
        ambient_dim: int,
        constraints: Sequence[Expression],
        regularity_tol: float = 1e-8,
        projection_tol: float = 1e-12,
        max_iter: int = 60,
    ):
        constraints = tuple(constraints)
        for c in constraints:
            if c.ambient_dim != ambient_dim:
                raise GeometryError("constraint dimension mismatch")
        if ambient_dim - len(constraints) < 1:
            raise GeometryError("manifold dimension N - k must be at least 1")
        self.ambient_dim = ambient_dim
        self.constraints = constraints
        self.regularity_tol = regularity_tol
        self.projection_tol = projection_tol
        self.max_iter = max_iter

    @classmethod
    def from_text(cls, ambient_dim: int, texts: Sequence[str], **kw) -> "LevelSetManifold":
        return cls(ambient_dim, [parse_expression(t, ambient_dim) for t in texts], **kw)

    @property
    def dim(self) -> int:
        return self.ambient_dim - len(self.constraints)

    @property
    def codim(self) -> int:
        return len(self.constraints)

    def residual(self, x) -> np.ndarray:
        return np.array([eval_value(c, x) for c in self.constraints], dtype=float)

    def residual_jacobian(self, x) -> tuple[np.ndarray, np.ndarray]:
        vals = []
        rows = []
        for c in self.constraints:
            v, g = eval_value_grad(c, x)
            vals.append(v)
            rows.append(g)
        return np.array(vals, dtype=float), np.array(rows, dtype=float).reshape(self.codim, self.ambient_dim)

    def jacobian(self, x) -> np.ndarray:
        return self.residual_jacobian(x)[1]

    def _check_rank(self, J: np.ndarray):
        if self.codim == 0:
            return
        smin = np.linalg.svd(J, compute_uv=False)[-1]
        if not smin > self.regularity_tol:
            raise RankDeficiencyError(f"constraint Jacobian rank deficient (sigma_min={smin:.3g})")

    def contains(self, x, tol: float | None = None) -> bool:
        if self.codim == 0:
            return True
        return float(np.linalg.norm(self.residual(x))) < (tol or 10 * self.projection_tol)

    def project(self, x) -> np.ndarray:
        """Gauss-Newton (minimum-norm) projection onto the level set."""
        y = np.array(x, dtype=float)
        if self.codim == 0:
            return y
        for _ in range(self.max_iter):
            c, J = self.residual_jacobian(y)
            if np.linalg.norm(c) < self.projection_tol:
                self._check_rank(J)
                return y
            JJt = J @ J.T
            try:
                step = J.T @ np.linalg.solve(JJt, c)
            except np.linalg.LinAlgError as exc:
                raise RankDeficiencyError("singular Jacobian during projection") from exc
            if not np.all(np.isfinite(step)):
                raise ProjectionError("projection diverged")
            y = y - step
        c = self.residual(y)
        if np.linalg.norm(c) < self.projection_tol:
            return y
        raise ProjectionError(f"projection did not converge (residual {np.linalg.norm(c):.3g})")

    def retract(self, x, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if not np.any(v):
            return np.array(x, dtype=float)
        return self.project(np.asarray(x, dtype=float) + v)

    def tangent_projector(self, x) -> TangentProjector:
        x = np.array(x, dtype=float)
        P = self._projector(self.jacobian(x))
        return TangentProjector(x, P)

    def _projector(self, J: np.ndarray) -> np.ndarray:
        n = self.ambient_dim
        if self.codim == 0:
            return np.eye(n)
        self._check_rank(J)
        P = np.eye(n) - J.T @ np.linalg.solve(J @ J.T, J)
        return 0.5 * (P + P.T)

    def tangent_frame(self, x) -> np.ndarray:
        """Orthonormal tangent frame (N x dim), reproducible via pivoted QR."""
        P = self.tangent_projector(x).matrix
        return frame_from_projector(P, self.dim)

    def multipliers(self, J: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.codim == 0:
            return np.zeros(0)
        return np.linalg.solve(J @ J.T, J @ grad)

    def riemannian_gradient(self, f: Expression, x) -> np.ndarray:
        _, g = eval_value_grad(f, x)
        g = np.array(g)
        if self.codim == 0:
            return g
        _, J = self.residual_jacobian(x)
        self._check_rank(J)
        return g - J.T @ self.multipliers(J, g)

    def ambient_lagrangian_hessian(self, f: Expression, x) -> np.ndarray:
        jet = eval_jet2(f, x)
        H = jet.hessian.copy()
        if self.codim:
            jets = [eval_jet2(c, x) for c in self.constraints]
            J = np.array([j.gradient for j in jets])
            self._check_rank(J)
            lam = self.multipliers(J, jet.gradient)
            for li, cj in zip(lam, jets):
                H -= li * cj.hessian
        return 0.5 * (H + H.T)

    def riemannian_hessian(self, f: Expression, x, frame: np.ndarray | None = None) -> np.ndarray:
        """Intrinsic Hessian Q^T (Hf - sum lambda_i Hc_i) Q in an orthonormal tangent frame."""
        Q = self.tangent_frame(x) if frame is None else frame
        H = Q.T @ self.ambient_lagrangian_hessian(f, x) @ Q
        return 0.5 * (H + H.T)

    def sample_points(self, n: int, seed: int = 0, box: float = 2.0, max_tries: int | None = None) -> list[np.ndarray]:
        """Deterministic on-manifold samples: scrambled Sobol points in [-box, box]^N, projected."""
        sampler = qmc.Sobol(self.ambient_dim, scramble=True, seed=seed)
        out: list[np.ndarray] = []
        tries = max_tries or 8 * n + 64
        batch = 1 << max(4, int(np.ceil(np.log2(max(n, 2)))))
        drawn = 0
        while len(out) < n and drawn < tries:
            pts = (2.0 * sampler.random(batch) - 1.0) * box
            drawn += batch
            for p in pts:
                try:
                    out.append(self.project(p))
                except (GeometryError, ArithmeticError, ValueError):
                    continue
                if len(out) == n:
                    break
        if len(out) < n:
            raise ProjectionError(f"could only sample {len(out)} of {n} points")
        return out


def frame_from_projector(P: np.ndarray, rank: int) -> np.ndarray:
    if rank == 0:
        return np.zeros((P.shape[0], 0))
    Q, R, _ = scipy.linalg.qr(P, pivoting=True)
    Q = Q[:, :rank]
    # fix column signs so frames do not depend on LAPACK sign conventions
    s = np.sign(np.diag(R)[:rank])
    s[s == 0] = 1.0
    return Q * s


def orthonormal_complement(F: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Orthonormal basis of span(F) minus span(W) (columns), assuming span(W) within span(F)."""
    d = F.shape[1]
    if W.shape[1] == 0:
        return F.copy()
    r = d - W.shape[1]
    if r <= 0:
        return np.zeros((F.shape[0], 0))
    Pw = W @ W.T
    C = F - Pw @ F
    Q, R, _ = scipy.linalg.qr(C, pivoting=True)
    Q = Q[:, :r]
    s = np.sign(np.diag(R)[:r])
    s[s == 0] = 1.0
    return Q * s


def normalize_columns(E: np.ndarray) -> np.ndarray:
    """Fix each column's sign so its largest-magnitude entry is positive."""
    E = E.copy()
    for j in range(E.shape[1]):
        col = E[:, j]
        k = int(np.argmax(np.abs(np.round(col, 12))))
        if col[k] < 0:
            E[:, j] = -col
    return E


# functional aliases


def project_to_manifold(m: LevelSetManifold, x) -> np.ndarray:
    return m.project(x)


def tangent_projector(m: LevelSetManifold, x) -> TangentProjector:
    return m.tangent_projector(x)


def riemannian_gradient(m: LevelSetManifold, f: Expression, x) -> np.ndarray:
    return m.riemannian_gradient(f, x)


def riemannian_hessian(m: LevelSetManifold, f: Expression, x) -> np.ndarray:
    return m.riemannian_hessian(f, x)


def retract(m: LevelSetManifold, x, v) -> np.ndarray:
    return m.retract(x, v)
