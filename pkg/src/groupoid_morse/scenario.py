"""Scenario files (TOML, or the JSON mirror) and their validation."""

from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .expr import ExpressionError, parse_expression
from .flow import TrajectoryConfig
from .geometry import LevelSetManifold
from .groupoid import ActionGroupoid
from .morse import SearchOptions
from .symmetry import SymmetryError, TorusAction, close_group, finite_preset, haar_average, torus_preset

TASKS = ("analyze", "flow", "complex", "inequalities", "verify")
SCENARIO_DIR = Path(__file__).parent / "scenarios"


class ScenarioError(ValueError):
    """Validation failure; ``errors`` lists (field path, message) pairs."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = errors
        super().__init__("; ".join(f"{p}: {m}" if p else m for p, m in errors))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SymmetrySpec(_Strict):
    kind: Literal["finite", "torus"] = "finite"
    preset: Optional[str] = "trivial"
    generators: Optional[list[list[list[float]]]] = None


class SearchSpec(_Strict):
    n_starts: int = Field(48, ge=1)
    seed: int = Field(0, ge=0)
    gd_steps: int = Field(150, ge=0)
    box: float = Field(2.0, gt=0)


class Tolerances(_Strict):
    critical_tol: float = Field(1e-8, gt=0)
    nondeg_tol: float = Field(1e-6, gt=0)
    regularity_tol: float = Field(1e-8, gt=0)
    projection_tol: float = Field(1e-12, gt=0)


class FlowSpec(_Strict):
    step: float = Field(1e-3, gt=0)
    max_time: float = Field(200.0, gt=0)
    capture_radius: float = Field(1e-3, gt=0)
    shoot_radius: float = Field(1e-3, gt=0)
    n_shoot: int = Field(2, ge=2)


class ComplexSpec(_Strict):
    n_max: Optional[int] = Field(None, ge=1)


class VerifySpec(_Strict):
    band: Optional[tuple[float, float]] = None
    samples: int = Field(8, ge=1)

    @field_validator("band")
    @classmethod
    def _ordered(cls, v):
        if v is not None and not v[0] < v[1]:
            raise ValueError("band must satisfy a < b")
        return v


class References(_Strict):
    poincare: Optional[list[int]] = None
    betti: Optional[list[int]] = None
    provenance: str = ""

    @field_validator("poincare", "betti")
    @classmethod
    def _nonneg(cls, v):
        if v is not None and any(c < 0 for c in v):
            raise ValueError("reference coefficients must be nonnegative integers")
        return v


class Scenario(_Strict):
    name: str
    description: str = ""
    ambient_dim: int = Field(ge=1)
    constraints: list[str] = []
    function: str
    average: bool = False
    tasks: list[Literal["analyze", "flow", "complex", "inequalities", "verify"]] = ["analyze"]
    symmetry: SymmetrySpec = SymmetrySpec()
    search: SearchSpec = SearchSpec()
    tolerances: Tolerances = Tolerances()
    flow: FlowSpec = FlowSpec()
    complex: ComplexSpec = ComplexSpec()
    verify: VerifySpec = VerifySpec()
    references: References = References()

    @model_validator(mode="after")
    def _consistent(self):
        n = self.ambient_dim
        if len(self.constraints) >= n:
            raise ValueError("need fewer constraints than ambient dimensions")
        for i, c in enumerate(self.constraints):
            _parse(c, n, f"constraints.{i}")
        _parse(self.function, n, "function")
        dim = n - len(self.constraints)
        for key in ("poincare", "betti"):
            ref = getattr(self.references, key)
            if ref is not None and len(ref) > dim + 1:
                raise ValueError(f"references.{key} is longer than dim M + 1 = {dim + 1}")
        if self.symmetry.generators is not None:
            for g in self.symmetry.generators:
                if np.shape(g) != (n, n):
                    raise ValueError(f"symmetry.generators must be {n}x{n} matrices")
        return self

    @property
    def manifold_dim(self) -> int:
        return self.ambient_dim - len(self.constraints)


def _parse(text: str, n: int, path: str):
    try:
        return parse_expression(text, n)
    except ExpressionError as exc:
        raise ValueError(f"{path}: {exc}") from exc


def validate_scenario(data: dict) -> Scenario:
    try:
        return Scenario.model_validate(data)
    except ValidationError as exc:
        errs = []
        for e in exc.errors():
            path = ".".join(str(p) for p in e["loc"])
            errs.append((path, e["msg"]))
        raise ScenarioError(errs) from None


def load_scenario(path) -> Scenario:
    """Read a .toml or .json scenario; names of shipped scenarios are accepted too."""
    p = Path(path)
    if not p.exists() and (SCENARIO_DIR / f"{path}.toml").exists():
        p = SCENARIO_DIR / f"{path}.toml"
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise ScenarioError([("", f"cannot read {p}: {exc.strerror}")]) from None
    try:
        if p.suffix == ".json":
            data = json.loads(raw)
        else:
            data = tomllib.loads(raw.decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioError([("", f"JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}")]) from None
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError([("", f"TOML parse error: {exc}")]) from None
    except UnicodeDecodeError:
        raise ScenarioError([("", "scenario file is not UTF-8")]) from None
    if not isinstance(data, dict):
        raise ScenarioError([("", "scenario must be a table/object")])
    return validate_scenario(data)


def shipped_scenarios() -> list[Path]:
    return sorted(SCENARIO_DIR.glob("*.toml"))


# construction


def build_symmetry(scn: Scenario):
    s, n = scn.symmetry, scn.ambient_dim
    try:
        if s.kind == "finite":
            if s.generators is not None:
                return close_group([np.array(g) for g in s.generators], name="custom")
            return finite_preset(s.preset or "trivial", n)
        if s.generators is not None:
            return TorusAction([np.array(g) for g in s.generators], name="custom")
        return torus_preset(s.preset or "", n)
    except SymmetryError as exc:
        raise ScenarioError([("symmetry", str(exc))]) from None


def build(scn: Scenario):
    """(groupoid, function, search options, flow config) for a validated scenario."""
    n = scn.ambient_dim
    t = scn.tolerances
    man = LevelSetManifold(
        n,
        [parse_expression(c, n) for c in scn.constraints],
        regularity_tol=t.regularity_tol,
        projection_tol=t.projection_tol,
    )
    sym = build_symmetry(scn)
    gpd = ActionGroupoid(man, sym)
    f = parse_expression(scn.function, n)
    if scn.average:
        f = haar_average(sym, f)
    opt = SearchOptions(
        n_starts=scn.search.n_starts,
        seed=scn.search.seed,
        gd_steps=scn.search.gd_steps,
        newton_tol=t.critical_tol,
        nondeg_tol=t.nondeg_tol,
        box=scn.search.box,
    )
    cfg = TrajectoryConfig(
        step=scn.flow.step,
        max_time=scn.flow.max_time,
        capture_radius=scn.flow.capture_radius,
        shoot_radius=scn.flow.shoot_radius,
        critical_tol=t.critical_tol,
    )
    return gpd, f, opt, cfg
