"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line."""

from __future__ import annotations

import functools
import time

import numpy as np
import pytest
from scipy.stats import special_ortho_group

from groupoid_morse.groupoid import conjugate_presentation_check, normal_representation
from groupoid_morse.report import STAGES, run_scenario
from groupoid_morse.scenario import build, load_scenario, shipped_scenarios


@functools.lru_cache(maxsize=None)
def timed(name: str):
    """Full run (all tasks, invariant suite included) and its wall time."""
    t0 = time.perf_counter()
    rep = run_scenario(name, tasks=list(STAGES["verify"]))
    return rep, time.perf_counter() - t0


@pytest.fixture
def verdict(capsys):
    def emit(k: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\nACCEPTANCE {k}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, detail

    return emit


def trim(p):
    p = list(p)
    while len(p) > 1 and p[-1] == 0:
        p.pop()
    return p


def orbits_of(rep):
    return rep.sections["critical_orbits"]


def test_1_sphere_height(verdict):
    rep, dt = timed("sphere_height")
    orbs = orbits_of(rep)
    vals = [(o["value"], o["index"]) for o in orbs]
    ok = (
        len(orbs) == 2
        and all(o["nondegenerate"] for o in orbs)
        and abs(vals[0][0] + 1) <= 1e-8 and vals[0][1] == 0
        and abs(vals[1][0] - 1) <= 1e-8 and vals[1][1] == 2
        and rep.sections["morse_polynomial"] == [1, 0, 1]
        and rep.sections["total_cohomology"] == [1, 0, 1]
        and rep.sections["inequalities"]["remainder"] == [0]
        and rep.passed
        and dt < 5
    )
    verdict(1, ok, f"(value, index) = {vals}, M = {rep.sections['morse_polynomial']}, "
            f"P = {rep.sections['total_cohomology']}, R = {rep.sections['inequalities']['remainder']}, {dt:.1f}s < 5s")


def test_2_rp2(verdict):
    rep, dt = timed("rp2")
    orbs = orbits_of(rep)
    ineq = rep.sections["inequalities"]
    ref = ineq["reference"]
    ok = (
        [o["index"] for o in orbs] == [0, 1, 2]
        and all(o["orientable"] for o in orbs)
        and rep.sections["morse_polynomial"] == [1, 1, 1]
        and trim(ref["poincare_polynomial"]) == [1]
        and ref["remainder"] == [0, 1]
        and all(c >= 0 for c in ref["remainder"])
        and rep.sections["double_complex"]["n_max"] == 3
        and rep.sections["total_cohomology"] == [1, 0, 0]
        and rep.passed
        and dt < 60
    )
    verdict(2, ok, f"indices {[o['index'] for o in orbs]}, M = {rep.sections['morse_polynomial']}, "
            f"R vs reference = {ref['remainder']}, total cohomology (n_max=3) = {rep.sections['total_cohomology']}, {dt:.1f}s < 60s")


def test_3_z3_rotation(verdict):
    rep, dt = timed("z3_sphere")
    orbs = orbits_of(rep)
    ctx = rep.artifacts["ctx"]
    gpd = ctx.gpd
    c, s = np.cos(2 * np.pi / 3), np.sin(2 * np.pi / 3)
    rot_ok = True
    for o in ctx.orbits:
        for g in o.isotropy.elements:
            if g == gpd.symmetry.identity:
                continue
            R = normal_representation(gpd, g, o.frame)
            # rotation by +-2pi/3 in some orthonormal basis of the normal plane
            rot_ok &= bool(np.allclose(R.T @ R, np.eye(2), atol=1e-10))
            rot_ok &= abs(np.linalg.det(R) - 1) < 1e-10 and abs(R[0, 0] - c) < 1e-10 and abs(abs(R[1, 0]) - s) < 1e-10
    ok = (
        len(orbs) == 2
        and all(o["isotropy_order"] == 3 and o["orbit_size"] == 1 and o["orientable"] for o in orbs)
        and rot_ok
        and rep.sections["total_cohomology"] == [1, 0, 1]
        and rep.passed
        and dt < 60
    )
    verdict(3, ok, f"isotropy orders {[o['isotropy_order'] for o in orbs]}, normal reps rotate by 2pi/3: {rot_ok}, "
            f"total cohomology = {rep.sections['total_cohomology']}, {dt:.1f}s < 60s")


def test_4_tilted_torus(verdict):
    rep, dt = timed("tilted_torus")
    orbs = orbits_of(rep)
    census = rep.sections["flow_census"]
    w = rep.sections["witten_homology"]
    checks = {c["name"]: c["passed"] for c in rep.checks}
    ok = (
        [o["index"] for o in orbs] == [0, 1, 1, 2]
        and len(census) == 4
        and all(c["lines_total"] == 2 for c in census)
        and w["Z2"] == [1, 2, 1]
        and w["Q"] == [1, 2, 1]
        and rep.sections["manifold_homology"] == {"Z2": [1, 2, 1], "Q": [1, 2, 1]}
        and checks.get("complex.flow_square_zero", False)
        and rep.passed
        and dt < 120
    )
    verdict(4, ok, f"indices {[o['index'] for o in orbs]}, lines per pair {[c['lines_total'] for c in census]}, "
            f"Z2 = {w['Z2']}, Q = {w['Q']}, d^2 = 0: {checks.get('complex.flow_square_zero')}, {dt:.1f}s < 120s")


def test_5_moment_map(verdict):
    rep, _ = timed("moment_map")
    orbs = orbits_of(rep)
    idx = sorted(o["index"] for o in orbs)
    ok = (
        len(orbs) == 2
        and all(o["orbit_dim"] == 0 and o["isotropy_dim"] == 1 for o in orbs)
        and idx == [0, 2]
        and rep.sections["index_parity"] == [0]
        and rep.passed
    )
    verdict(5, ok, f"fixed-point orbits with indices {idx}")


def test_6_invariant_suite(verdict):
    failures, summary = [], []
    wanted = (
        "verify.hessian_fd", "verify.normal_invariance", "verify.flow_equivariance", "verify.local_model",
        "verify.saturation", "verify.noncritical_retraction",
    )
    for path in shipped_scenarios():
        rep, _ = timed(path.stem)
        checks = {c["name"]: c["passed"] for c in rep.checks}
        missing = [w for w in wanted if w not in checks]
        if rep.artifacts["ctx"].dc is not None:
            missing += [w for w in ("complex.nerve_square_zero", "complex.flow_square_zero", "complex.commute") if w not in checks]
        bad = [n for n, p in checks.items() if not p]
        if bad or missing:
            failures.append(f"{path.stem}: failed {bad} missing {missing}")
        summary.append(f"{path.stem}({len(checks)})")
    verdict(6, not failures, "; ".join(failures) or f"all checks pass on {', '.join(summary)}")


def test_7_conjugated_presentations(verdict):
    rng = np.random.default_rng(2024)
    bad = []
    runs = 0
    for name in ("sphere_height", "rp2", "z3_sphere"):
        gpd, f, opt, _ = build(load_scenario(name))
        for _ in range(5):
            Q = special_ortho_group.rvs(3, random_state=rng)
            if rng.random() < 0.5:
                Q = Q @ np.diag([1.0, 1.0, -1.0])  # include orientation-reversing conjugations
            res = conjugate_presentation_check(gpd, f, Q, opt)
            runs += 1
            if not res["passed"]:
                bad.append((name, res["original"], res["conjugated"]))
    verdict(7, not bad, f"{runs - len(bad)}/{runs} conjugated inventories equal" + (f"; mismatches {bad}" if bad else ""))


def _line_keys(name: str, halve: bool):
    scn = load_scenario(name)
    if halve:
        scn = scn.model_copy(update={"flow": scn.flow.model_copy(update={"step": scn.flow.step / 2})})
    rep = run_scenario(scn, tasks=["flow"])
    lines = rep.artifacts["ctx"].lines
    return {pair: sorted((l.start, l.end, l.sign) for l in ls) for pair, ls in lines.items()}


def test_8_step_refinement(verdict):
    diffs = []
    counts = []
    for name in ("rp2", "tilted_torus"):
        a, b = _line_keys(name, False), _line_keys(name, True)
        counts.append(f"{name}: {sum(len(v) for v in a.values())} lines")
        if a != b:
            diffs.append(f"{name}: {a} vs {b}")
    verdict(8, not diffs, "; ".join(diffs) or "halving the step preserves endpoints and signs (" + ", ".join(counts) + ")")
