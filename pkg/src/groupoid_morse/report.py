"""Pipeline orchestration and report emission."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .complex import (
    ComplexError,
    build_nerve_double_complex,
    build_witten_complex,
    homology_ranks,
    total_cohomology,
    total_square_zero,
)
from .expr import eval_value
from .flow import (
    CriticalIndex,
    FlowError,
    check_flow_equivariance,
    check_noncritical_retraction,
    enumerate_flow_lines,
    moduli_quotient,
    saturate_lines,
    write_trajectories_csv,
)
from .geometry import GeometryError
from .groupoid import check_basic, check_groupoid_axioms
from .morse import (
    MorseError,
    check_hessian_normal_invariance,
    check_morse_inequalities,
    classify_critical_point,
    find_critical_orbits,
    morse_polynomial,
    verify_local_model,
)
from .scenario import Scenario, ScenarioError, build, load_scenario
from .symmetry import SymmetryError, preserves_manifold

SCHEMA_VERSION = "1"
FORMATS = ("json", "csv", "text")
STAGES = {
    "analyze": ("analyze",),
    "flow": ("analyze", "flow"),
    "complex": ("analyze", "flow", "complex", "inequalities"),
    "verify": ("analyze", "flow", "complex", "inequalities", "verify"),
}

log = logging.getLogger(__name__)


def _num(v: float) -> float:
    """Round for stable, readable output; roundoff-sized magnitudes print as 0."""
    v = float(v)
    if abs(v) < 1e-15:
        return 0.0
    return float(f"{v:.12g}")


@dataclass
class Report:
    scenario: dict
    sections: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)
    # in-memory artifacts, not serialized
    artifacts: dict = field(default_factory=dict, repr=False)

    def check(self, name: str, passed: bool, **detail):
        self.checks.append({"name": name, "passed": bool(passed), **detail})

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1

    def to_dict(self, timing: bool = False) -> dict:
        out = {
            "schema_version": SCHEMA_VERSION,
            "scenario": self.scenario,
            **self.sections,
            "checks": self.checks,
            "passed": self.passed,
        }
        if timing:
            out["timing"] = self.timing
        return out


class _Ctx:
    def __init__(self, scn: Scenario):
        self.scn = scn
        self.gpd, self.f, self.opt, self.cfg = build(scn)
        self.orbits = None
        self.census = None
        self.lines = None  # saturated lines per (hi, lo)
        self.index = None
        self.dc = None


def run_scenario(source, tasks=None, seed: int | None = None) -> Report:
    """Run a scenario (path, shipped name, or Scenario) through the requested tasks in dependency order."""
    scn = source if isinstance(source, Scenario) else load_scenario(source)
    if seed is not None:
        scn = scn.model_copy(update={"search": scn.search.model_copy(update={"seed": seed})})
    wanted = set(scn.tasks if tasks is None else tasks)
    if wanted - set(STAGES) - {"inequalities"}:
        raise ScenarioError([("tasks", f"unknown task(s) {sorted(wanted - set(STAGES) - {'inequalities'})}")])
    report = Report(scenario=_echo(scn))
    ctx = _Ctx(scn)
    order = [t for t in ("analyze", "flow", "complex", "inequalities", "verify") if t in wanted]
    # dependencies: flow and complex need the inventory, complex needs flow lines
    needed = set(order)
    if needed & {"flow", "complex", "inequalities", "verify"}:
        needed.add("analyze")
    if "complex" in needed:
        needed.add("flow")
    if "inequalities" in needed and ctx.gpd.is_finite:
        needed |= {"flow", "complex"}
    for task in ("analyze", "flow", "complex", "inequalities", "verify"):
        if task not in needed:
            continue
        t0 = time.perf_counter()
        try:
            _TASKS[task](ctx, report)
        except _Skip as exc:
            report.sections.setdefault("skipped", {})[task] = str(exc)
        except (MorseError, FlowError, ComplexError, GeometryError, SymmetryError, ArithmeticError) as exc:
            report.check(f"{task}.completed", False, error=f"{type(exc).__name__}: {exc}")
        report.timing[task] = round(time.perf_counter() - t0, 3)
    report.artifacts["ctx"] = ctx
    return report


class _Skip(Exception):
    pass


def _echo(scn: Scenario) -> dict:
    return scn.model_dump(mode="json")


# tasks


def _analyze(ctx: _Ctx, report: Report):
    gpd, f = ctx.gpd, ctx.f
    box = ctx.scn.search.box
    basic = check_basic(gpd, f, samples=24, seed=ctx.opt.seed, box=box)
    report.check("basic", basic.passed, max_deviation=_num(basic.max_deviation))
    if not basic.passed:
        raise _Skip("function is not basic; critical search skipped")
    try:
        res = preserves_manifold(gpd.symmetry, gpd.manifold, samples=24, seed=ctx.opt.seed, box=box)
        report.check("symmetry_preserves_manifold", True, max_residual=_num(res))
    except SymmetryError as exc:
        report.check("symmetry_preserves_manifold", False, error=str(exc))
        raise _Skip("symmetry does not preserve the manifold") from None
    orbits = find_critical_orbits(gpd, f, ctx.opt)
    ctx.orbits = orbits
    report.sections["critical_orbits"] = [_orbit_json(o) for o in orbits]
    report.sections["attachments"] = [
        {"orbit": o.id, "value": _num(o.value), "cell_dim": o.index, "orbit_dim": o.orbit_dim}
        for o in orbits
        if o.nondegenerate
    ]
    if gpd.is_finite:
        report.sections["morse_polynomial"] = morse_polynomial(orbits)
    else:
        report.sections["morse_polynomial"] = None
        report.sections["index_parity"] = sorted({o.index % 2 for o in orbits})


def _orbit_json(o) -> dict:
    return {
        "id": o.id,
        "value": _num(o.value),
        "index": o.index,
        "stacky_index": o.stacky_index,
        "orbit_dim": o.orbit_dim,
        "orbit_size": o.orbit_size,
        "isotropy_order": o.isotropy.finite_order,
        "isotropy_dim": o.isotropy.dim,
        "nondegenerate": o.nondegenerate,
        "orientable": o.orientable,
        "normal_spectrum": [_num(m) for m in o.normal_spectrum],
        "representative": [_num(v) for v in o.representative],
    }


def _flowable(ctx: _Ctx):
    if ctx.orbits is None:
        raise _Skip("no critical inventory")
    if not ctx.gpd.is_finite:
        raise _Skip("flow-line enumeration is limited to finite symmetry groups")
    if any(o.orbit_dim or not o.nondegenerate for o in ctx.orbits):
        raise _Skip("flow-line enumeration needs nondegenerate isolated critical orbits")


def _flow(ctx: _Ctx, report: Report):
    _flowable(ctx)
    gpd, f, orbits, cfg = ctx.gpd, ctx.f, ctx.orbits, ctx.cfg
    ctx.index = CriticalIndex(gpd, f, orbits, cfg.critical_tol)
    census, lines = [], {}
    ok = True
    for hi in orbits:
        for lo in orbits:
            if hi.index - lo.index != 1:
                continue
            res = enumerate_flow_lines(gpd, f, orbits, hi, lo, cfg, n_shoot=ctx.scn.flow.n_shoot, seed=ctx.opt.seed)
            sat = saturate_lines(gpd, res.lines, orbits, ctx.index)
            lines[(hi.id, lo.id)] = sat
            rep = ctx.index.point_index(hi.id)
            from_rep = [l for l in sat if l.start == rep]
            signs = [l.sign for l in from_rep]
            classes = moduli_quotient(sat, gpd)
            census.append(
                {
                    "hi": hi.id,
                    "lo": lo.id,
                    "shots": res.shots,
                    "unresolved": res.unresolved,
                    "self_index_violations": res.self_index_violations,
                    "lines_from_representative": len(from_rep),
                    "lines_total": len(sat),
                    "moduli_classes": len(classes),
                    "signs": signs,
                    "signed_count": sum(signs) if None not in signs else None,
                }
            )
            ok &= res.passed
    ctx.census, ctx.lines = census, lines
    report.sections["flow_census"] = census
    report.check("flow.transversality", ok)
    report.artifacts["trajectories"] = [l.points for sat in lines.values() for l in sat]


def _complex(ctx: _Ctx, report: Report):
    if ctx.lines is None:
        raise _Skip("flow lines unavailable")
    orbits, index = ctx.orbits, ctx.index
    G = ctx.gpd.symmetry
    out = {}
    # point-level complex on M
    pts = {}
    for o in orbits:
        for j in range(len(o.points)):
            pts.setdefault(o.index, []).append(index.point_index(o.id, j))
    all_lines = [l for sat in ctx.lines.values() for l in sat]
    signed = all(l.sign is not None for l in all_lines)
    z2 = build_witten_complex(pts, _counts(all_lines, lambda l: (l.start, l.end), mod2=True), "Z2")
    manifold = {"Z2": homology_ranks(z2)}
    wq = None
    if signed:
        wq = build_witten_complex(pts, _counts(all_lines, lambda l: (l.start, l.end)), "Q")
        manifold["Q"] = homology_ranks(wq)
    out["manifold_homology"] = manifold
    report.check("complex.manifold_square_zero", True)
    # orbit-level complex, meaningful when the action is free on the critical set
    if all(o.isotropy.finite_order == 1 for o in orbits):
        gens = {}
        for o in orbits:
            gens.setdefault(o.index, []).append(o.id)
        reps = {index.point_index(o.id) for o in orbits}
        owner = index.owner
        rep_lines = [l for l in all_lines if l.start in reps]
        key = lambda l: (owner[l.start], owner[l.end])
        wit = {"Z2": homology_ranks(build_witten_complex(gens, _counts(rep_lines, key, mod2=True), "Z2"))}
        if signed:
            ogens = {d: [i for i in ids if orbits[i].orientable] for d, ids in gens.items()}
            wit["Q"] = homology_ranks(build_witten_complex(ogens, _counts(rep_lines, key), "Q"))
        out["witten_homology"] = wit
    else:
        report.sections.setdefault("skipped", {})["witten_orbit_complex"] = "action is not free on the critical set"
    # nerve double complex
    if signed and all(o.orientable for o in orbits):
        dim = ctx.gpd.manifold.dim
        n_max = ctx.scn.complex.n_max or dim + 1
        D = min(dim, n_max - 1)
        flat = [p for d in sorted(pts) for p in pts[d]]
        perm = [[_perm(G, g, p, index) for p in range(len(index))] for g in range(G.order)]
        dc = build_nerve_double_complex(G.order, G.cayley, perm, pts, wq, n_max, check=False)
        ids = dc.check_identities()
        ids["simplicial_identities"] = dc.check_simplicial_identities()
        ids["total_square_zero"] = total_square_zero(dc, D)
        for k, v in ids.items():
            report.check(f"complex.{k}", v)
        ctx.dc = dc
        out["double_complex"] = {
            "n_max": n_max,
            "grid": {f"{n},{i}": dc.block_dim(n, i) for n in range(n_max + 1) for i in sorted(pts)},
            "points": len(flat),
        }
        out["total_cohomology"] = total_cohomology(dc, D)
    else:
        report.sections.setdefault("skipped", {})["double_complex"] = (
            "needs signed counts and orientable critical orbits"
        )
    report.sections.update(out)
    ref = ctx.scn.references.betti
    if ref is not None:
        got = out.get("total_cohomology") or out.get("witten_homology", {}).get("Q")
        if got is not None:
            report.check("complex.matches_reference_betti", _pad(got, len(ref)) == _pad(ref, len(got)), computed=got, reference=ref)


def _pad(v, n):
    v = list(v)
    return v + [0] * (max(n - len(v), 0))


def _perm(G, g, p, index) -> int:
    y = G.act(g, index.points[p])
    d = np.linalg.norm(index.points - y, axis=1)
    j = int(np.argmin(d))
    if d[j] > 1e-6:
        raise ComplexError("group does not permute the critical points")
    return j


def _counts(lines, key, mod2: bool = False) -> dict:
    c: dict = {}
    for l in lines:
        k = key(l)
        c[k] = c.get(k, 0) + (1 if mod2 else l.sign)
    return c


def _inequalities(ctx: _Ctx, report: Report):
    if ctx.orbits is None:
        raise _Skip("no critical inventory")
    if not ctx.gpd.is_finite:
        raise _Skip("Morse polynomials are limited to finite symmetry groups")
    M = morse_polynomial(ctx.orbits)
    P, source = None, None
    if "total_cohomology" in report.sections:
        P, source = report.sections["total_cohomology"], "total_cohomology"
    elif "Q" in report.sections.get("witten_homology", {}):
        P, source = report.sections["witten_homology"]["Q"], "witten_homology"
    elif ctx.scn.references.poincare is not None:
        P, source = ctx.scn.references.poincare, "reference"
    out = {"morse_polynomial": M}
    if P is not None:
        res = check_morse_inequalities(M, P)
        out.update(
            poincare_polynomial=list(P),
            poincare_source=source,
            remainder=list(res.remainder) if res.remainder is not None else None,
            lacunary=res.lacunary,
        )
        report.check("inequalities.computed", res.passed and res.lacunary_consistent)
    ref = ctx.scn.references.poincare
    if ref is not None:
        rr = check_morse_inequalities(M, ref)
        out["reference"] = {
            "poincare_polynomial": ref,
            "provenance": ctx.scn.references.provenance,
            "remainder": list(rr.remainder) if rr.remainder is not None else None,
        }
        report.check("inequalities.reference", rr.passed and rr.lacunary_consistent)
    report.sections["inequalities"] = out


def _verify(ctx: _Ctx, report: Report):
    if ctx.orbits is None:
        raise _Skip("no critical inventory")
    gpd, f, orbits, cfg = ctx.gpd, ctx.f, ctx.orbits, ctx.cfg
    seed, box = ctx.opt.seed, ctx.scn.search.box
    out = {}
    # Hessian against finite differences of f o retraction
    err = hessian_fd_error(gpd, f, [o.representative for o in orbits] + gpd.manifold.sample_points(4, seed=seed, box=box))
    out["hessian_fd_rel_error"] = _num(err)
    report.check("verify.hessian_fd", err < 1e-4, value=_num(err))
    inv = max((check_hessian_normal_invariance(gpd, f, o) for o in orbits), default=0.0)
    out["normal_invariance"] = _num(inv)
    report.check("verify.normal_invariance", inv < 1e-8, value=_num(inv))
    eq = check_flow_equivariance(gpd, f, samples=4, cfg=cfg, seed=seed, box=box)
    out["flow_equivariance"] = _num(eq)
    report.check("verify.flow_equivariance", eq < 1e-6, value=_num(eq))
    slopes = [verify_local_model(gpd, f, o, seed=seed) for o in orbits if o.nondegenerate]
    worst = min((s.slope for s in slopes), default=float("inf"))
    out["local_model_slope"] = _num(worst) if np.isfinite(worst) else "exact"
    report.check("verify.local_model", all(s.passed for s in slopes))
    sat = saturation_error(gpd, f, orbits, seed=seed)
    out["saturation_grad"] = _num(sat)
    report.check("verify.saturation", sat < 10 * cfg.critical_tol, value=_num(sat))
    spread = index_spread(gpd, f, orbits, ctx.opt, seed=seed)
    out["index_spread"] = _num(spread)
    report.check("verify.index_constant_on_orbits", spread < 1e-6, value=_num(spread))
    ax = check_groupoid_axioms(gpd, samples=6, seed=seed, box=box)
    report.check("verify.groupoid_axioms", ax["passed"], value=_num(ax["max_deviation"]))
    band = ctx.scn.verify.band or auto_band(orbits)
    if band is not None:
        rr = check_noncritical_retraction(gpd, f, band[0], band[1], orbits, samples=ctx.scn.verify.samples, cfg=cfg, seed=seed, box=box)
        out["retraction"] = {"band": [_num(band[0]), _num(band[1])], "samples": rr.samples, "failures": rr.failures}
        report.check("verify.noncritical_retraction", rr.passed, rejected=rr.rejected)
    report.sections["invariants"] = out


def auto_band(orbits) -> tuple[float, float] | None:
    """Middle half of the widest gap between consecutive critical values."""
    vals = sorted({round(o.value, 9) for o in orbits})
    if len(vals) < 2:
        return None
    gaps = [(b - a, a, b) for a, b in zip(vals, vals[1:])]
    w, a, b = max(gaps)
    return a + 0.25 * w, b - 0.25 * w


def hessian_fd_error(gpd, f, points, h: float = 1e-4) -> float:
    """max relative error between the Riemannian Hessian and central differences of f o retraction."""
    m = gpd.manifold
    worst = 0.0
    for x in points:
        Q = m.tangent_frame(x)
        H = m.riemannian_hessian(f, x, Q)
        d = Q.shape[1]
        F = np.zeros((d, d))

        def g(v):
            return eval_value(f, m.retract(x, Q @ v))

        f0 = g(np.zeros(d))
        E = np.eye(d) * h
        for i in range(d):
            for j in range(i, d):
                if i == j:
                    F[i, i] = (g(E[i]) - 2 * f0 + g(-E[i])) / h**2
                else:
                    F[i, j] = F[j, i] = (
                        g(E[i] + E[j]) - g(E[i] - E[j]) - g(-E[i] + E[j]) + g(-E[i] - E[j])
                    ) / (4 * h**2)
        worst = max(worst, float(np.max(np.abs(F - H)) / max(1.0, float(np.max(np.abs(H))))))
    return worst


def saturation_error(gpd, f, orbits, seed: int = 0, samples: int = 6) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for o in orbits:
        for g in gpd.symmetry.sample_elements(rng, samples if not gpd.is_finite else gpd.symmetry.order):
            y = gpd.symmetry.act(g, o.representative)
            worst = max(worst, float(np.linalg.norm(gpd.manifold.riemannian_gradient(f, y))))
    return worst


def index_spread(gpd, f, orbits, opt, seed: int = 0) -> float:
    """Max spectral difference when classifying at up to three distinct orbit points."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for o in orbits:
        if gpd.is_finite:
            pts = o.points[:3]
        else:
            pts = [gpd.symmetry.act(g, o.representative) for g in gpd.symmetry.sample_elements(rng, 2)]
        for y in pts:
            c = classify_critical_point(gpd, f, y, opt)
            if c.index != o.index or len(c.normal_spectrum) != len(o.normal_spectrum):
                return float("inf")
            worst = max(worst, float(np.max(np.abs(np.subtract(c.normal_spectrum, o.normal_spectrum)), initial=0.0)))
    return worst


_TASKS = {
    "analyze": _analyze,
    "flow": _flow,
    "complex": _complex,
    "inequalities": _inequalities,
    "verify": _verify,
}


# emission


def emit_report(report: Report, fmt: str = "json", timing: bool = False) -> bytes:
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    d = report.to_dict(timing=timing)
    if fmt == "json":
        return (json.dumps(d, indent=2) + "\n").encode()
    if fmt == "csv":
        return _csv(d).encode()
    return _text(d).encode()


def _csv(d: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["# critical_orbits"])
    cols = ["id", "value", "index", "stacky_index", "orbit_dim", "orbit_size", "isotropy_order", "isotropy_dim", "nondegenerate", "orientable"]
    w.writerow(cols)
    for o in d.get("critical_orbits", []):
        w.writerow([o[c] for c in cols])
    w.writerow([])
    w.writerow(["# flow_census"])
    cols = ["hi", "lo", "shots", "unresolved", "lines_from_representative", "lines_total", "moduli_classes", "signed_count"]
    w.writerow(cols)
    for c in d.get("flow_census", []):
        w.writerow([c[k] for k in cols])
    w.writerow([])
    w.writerow(["# checks"])
    w.writerow(["name", "passed"])
    for c in d["checks"]:
        w.writerow([c["name"], c["passed"]])
    return buf.getvalue()


def _poly(p) -> str:
    from .morse import poly_to_text

    return poly_to_text(p) if p is not None else "n/a"


def _text(d: dict) -> str:
    s = d["scenario"]
    lines = [f"scenario: {s['name']}  (N={s['ambient_dim']}, constraints={len(s['constraints'])})"]
    if "critical_orbits" in d:
        lines.append("critical orbits:")
        for o in d["critical_orbits"]:
            size = o["orbit_size"] if o["orbit_size"] is not None else "inf"
            lines.append(
                f"  #{o['id']}: value={o['value']:.8g} index={o['index']} size={size} "
                f"isotropy={o['isotropy_order']}{'+T' + str(o['isotropy_dim']) if o['isotropy_dim'] else ''} "
                f"{'orientable' if o['orientable'] else 'non-orientable'}{'' if o['nondegenerate'] else ' DEGENERATE'}"
            )
    if d.get("morse_polynomial") is not None:
        lines.append(f"Morse polynomial: {_poly(d['morse_polynomial'])}")
    for c in d.get("flow_census", []):
        lines.append(
            f"lines #{c['hi']} -> #{c['lo']}: {c['lines_from_representative']} from representative, "
            f"{c['lines_total']} total, {c['moduli_classes']} classes, signed {c['signed_count']}"
        )
    for key in ("manifold_homology", "witten_homology"):
        if key in d:
            lines.append(f"{key.replace('_', ' ')}: " + ", ".join(f"{k}={v}" for k, v in d[key].items()))
    if "total_cohomology" in d:
        lines.append(f"total cohomology: {d['total_cohomology']}")
    if "inequalities" in d and "remainder" in d["inequalities"]:
        ineq = d["inequalities"]
        lines.append(f"P_t = {_poly(ineq['poincare_polynomial'])} ({ineq['poincare_source']}), R_t = {_poly(ineq['remainder'])}")
    for task, why in d.get("skipped", {}).items():
        lines.append(f"skipped {task}: {why}")
    lines.append("checks:")
    for c in d["checks"]:
        lines.append(f"  [{'PASS' if c['passed'] else 'FAIL'}] {c['name']}")
    lines.append("result: " + ("PASS" if d["passed"] else "FAIL"))
    return "\n".join(lines) + "\n"


def write_artifacts(report: Report, out_dir, stem: str, step: float):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trajs = report.artifacts.get("trajectories")
    if trajs:
        write_trajectories_csv(out / f"{stem}.trajectories.csv", trajs, step, every=50)
    ctx = report.artifacts.get("ctx")
    if ctx is not None and ctx.dc is not None:
        with open(out / f"{stem}.complex.json", "w") as fh:
            json.dump(ctx.dc.to_json(), fh, indent=2, sort_keys=True)
