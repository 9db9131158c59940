"""Acceptance criteria, each at its stated tolerance.

Every check is recorded in ``RESULTS``; the terminal summary (see conftest)
prints one PASS/FAIL line per criterion after the run.
"""
import time
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evcar.flow import expmap
from evcar.hamiltonians import HamiltonianId as H, hamiltonian, lifts
from evcar.model import Bounds, CarParams, constraints, normalize, x1_on_c3
from evcar.scenario import T_BAR, verify_gamma_plus
from evcar.shooting import _arc_span, _arc_start, eval_shooting, get_structure, solve

from conftest import REFERENCE_Y1
import oracles

RESULTS: dict[int, list] = defaultdict(list)
TITLES = {
    1: "bang-arc solve at i_max=1100",
    2: "event milestones and scenario runtime",
    3: "bang-arc optimality grid 50x50",
    4: "invariant suite",
    5: "hand-off consistency",
    6: "path health",
}


def record(criterion: int, part: str, ok: bool, detail: str = "") -> bool:
    RESULTS[criterion].append((part, bool(ok), detail))
    print(f"[{criterion}] {'PASS' if ok else 'FAIL'} {part} {detail}")
    return bool(ok)


def summary_lines() -> list[str]:
    lines = []
    for c in sorted(TITLES):
        parts = RESULTS.get(c)
        if not parts:
            lines.append(f"criterion {c} NOT RUN  {TITLES[c]}")
            continue
        failed = [f"{p} ({d})" for p, ok, d in parts if not ok]
        status = "PASS" if not failed else "FAIL"
        tail = f"; failing: {', '.join(failed)}" if failed else f" ({len(parts)} checks)"
        lines.append(f"criterion {c} {status}  {TITLES[c]}{tail}")
    return lines


# ---------------------------------------------------------------------------
# 1

@pytest.fixture(scope="module")
def timed_s1(mc1100):
    solve(mc1100, "S1", REFERENCE_Y1)              # JIT warm-up
    t0 = time.perf_counter()
    rep = solve(mc1100, "S1", REFERENCE_Y1)
    return rep, time.perf_counter() - t0


def test_criterion_1_bang_arc_solve(timed_s1):
    rep, elapsed = timed_s1
    tf = rep.y[3]
    ok = [
        record(1, "tf", abs(tf - 5.6156) <= 1e-3, f"{tf:.6f}"),
        record(1, "residual", rep.converged and rep.residual <= 1e-8, f"{rep.residual:.2e}"),
        record(1, "runtime", elapsed < 1.0, f"{elapsed:.3f}s"),
        record(1, "p0[1]", abs(rep.y[1] - 6.4479) <= 1e-3, f"{rep.y[1]:.6f}"),
        record(1, "p0[2]", abs(rep.y[2] - 0.2416) <= 1e-3, f"{rep.y[2]:.6f}"),
    ]
    assert all(ok)


@pytest.mark.xfail(strict=True, reason="the reference p0[0] = 0.3615 is the zero at i_max = i_max^c1; "
                   "at i_max = 1100 the zero has p0[0] = 0.36752 (independent oracle agrees)")
def test_criterion_1_first_costate_component(timed_s1):
    rep, _ = timed_s1
    ok = record(1, "p0[0]", abs(rep.y[0] - 0.3615) <= 1e-3,
                f"{rep.y[0]:.6f} vs 0.3615 (oracle {oracles.S1_ZERO_1100[0]:.6f})")
    assert ok


# ---------------------------------------------------------------------------
# 2

def test_criterion_2_milestones(scenario):
    ms = scenario["milestones"]
    assert not ms["errors"], ms["errors"]
    checks = [("i_max_c1", 1081.94, 0.5), ("v_max_c3", 70.3716, 0.05),
              ("v_max_gc3", 65.6042, 0.05), ("v_max_plus", 64.1641, 0.1)]
    ok = [record(2, key, abs(ms[key] - ref) <= tol, f"{ms[key]:.6f} vs {ref} +- {tol}")
          for key, ref, tol in checks]
    ok.append(record(2, "gc3 oracle", abs(ms["v_max_gc3"] - ms["v_max_gc3_oracle"]) <= 1e-6,
                     f"|diff| {abs(ms['v_max_gc3'] - ms['v_max_gc3_oracle']):.1e}"))
    ok.append(record(2, "runtime", ms["runtime_s"] < 300.0, f"{ms['runtime_s']:.1f}s"))
    assert all(ok)


# ---------------------------------------------------------------------------
# 3

def test_criterion_3_optimality_grid():
    t0 = time.perf_counter()
    res = verify_gamma_plus(grid_n=50, i_max=1200.0, v_max=120.0, t_bar=T_BAR)
    elapsed = time.perf_counter() - t0
    ok = [
        record(3, "crossings", res["zero_crossings"] == 0 and not res["failures"] and res["points"] == 2500,
               f"{res['zero_crossings']} on {res['points']} points, min |phi| {res['min_abs_phi']:.2e}"),
        record(3, "runtime", elapsed < 60.0, f"{elapsed:.1f}s"),
    ]
    assert all(ok)


# ---------------------------------------------------------------------------
# 4

def _property(fn) -> tuple[bool, str]:
    try:
        fn()
        return True, ""
    except AssertionError as exc:
        return False, str(exc).splitlines()[0][:120] if str(exc) else "assertion failed"


def test_criterion_4_conservation_on_solved_arcs(solved):
    worst_h = worst_p2 = 0.0
    for name, mc, sid, y in solved:
        s = get_structure(sid)
        for j, arc in enumerate(s.arcs):
            t0, t1 = _arc_span(s, y, j)
            res = expmap(mc, arc.hid, _arc_start(s, y, j), t0, t1, dense=True)
            hs = np.array([hamiltonian(mc, arc.hid, z) for z in res.zs])
            worst_h = max(worst_h, np.max(np.abs(hs - hs[0])))
            worst_p2 = max(worst_p2, np.max(np.abs(res.zs[:, 4] - res.zs[0, 4])))
    ok = record(4, "H level", worst_h <= 1e-9, f"{worst_h:.1e}")
    ok &= record(4, "p2", worst_p2 <= 1e-12, f"{worst_p2:.1e}")
    assert ok


def test_criterion_4_conservation_property(mc1100):
    @settings(max_examples=60, deadline=None, derandomize=True)
    @given(st.sampled_from(list(H)), st.lists(st.floats(-1, 1), min_size=6, max_size=6),
           st.floats(0.1, 6.0))
    def prop(hid, zl, T):
        z0 = np.array(zl)
        res = expmap(mc1100, hid, z0, 0, T, dense=True)
        h = np.array([hamiltonian(mc1100, hid, z) for z in res.zs])
        scale = max(1.0, np.abs(res.zs).max())
        assert np.max(np.abs(h - h[0])) <= 1e-9 * scale, f"{hid.name}: H drift {np.max(np.abs(h - h[0])):.1e}"
        assert np.max(np.abs(res.zs[:, 4] - z0[4])) <= 1e-12, f"{hid.name}: p2 drift"

    ok, msg = _property(prop)
    assert record(4, "flow conservation (property)", ok, msg)


def test_criterion_4_boundary_invariance(mc1100):
    mc3 = normalize(CarParams(), Bounds(150, 60, 100))

    @settings(max_examples=40, deadline=None, derandomize=True)
    @given(st.booleans(), st.floats(-1, 1), st.floats(0.2, 1.0), st.floats(-2, 2),
           st.floats(-2, 2), st.floats(0.1, 6.0))
    def prop(on_c1, x2, x3, p2, p3, T):
        if on_c1:
            res = expmap(mc1100, H.HC1, np.array([1.0, x2, x3, 0.0, p2, p3]), 0, T, dense=True)
            drift = max(np.max(np.abs(res.zs[:, 0] - 1.0)), np.max(np.abs(mc1100.k7 * res.zs[:, 3])))
        else:
            z0 = np.array([float(x1_on_c3(mc3.k)), x2, 1.0, 0.0, abs(p2) + 0.1, 0.0])
            res = expmap(mc3, H.HC3, z0, 0, T, dense=True)
            drift = 0.0
            for z in res.zs:
                c, lv = constraints(mc3, z[:3]), lifts(mc3, z)
                drift = max(drift, abs(c["c3"]), abs(c["F0c3"]), abs(lv.H1), abs(lv.H01))
        assert drift <= 1e-8, f"{'c1' if on_c1 else 'c3'} drift {drift:.1e}"

    ok, msg = _property(prop)
    assert record(4, "boundary manifold drift", ok, msg)


def test_criterion_4_jumps_and_transversality(solved):
    worst_nu, worst_p, min_h001 = -np.inf, 0.0, np.inf
    for name, mc, sid, y in solved:
        s = get_structure(sid)
        for nu in s.jumps:
            worst_nu = max(worst_nu, s.get(y, nu))
        j = len(s.arcs) - 1
        t0, t1 = _arc_span(s, y, j)
        zf = expmap(mc, s.arcs[j].hid, _arc_start(s, y, j), t0, t1).zT
        worst_p = max(worst_p, abs(zf[3]), abs(zf[5]))
        min_h001 = min(min_h001, lifts(mc, zf).H001)
    ok = record(4, "jumps <= 1e-6", worst_nu <= 1e-6, f"max nu {worst_nu:.2e}")
    ok &= record(4, "p1 = p3 = 0 at tf", worst_p <= 1e-8, f"{worst_p:.1e}")
    ok &= record(4, "H001 > 0 at tf", min_h001 > 0, f"min {min_h001:.3e}")
    assert ok


def test_criterion_4_variational_jacobians(mc1100):
    rng = np.random.default_rng(7)
    hids = list(H)
    eps, worst = 1e-6, 0.0
    for n in range(100):
        hid = hids[n % len(hids)]
        z0 = np.concatenate([rng.uniform(0, 0.9, 3), rng.uniform(-1, 1, 3)])
        T = rng.uniform(0.5, 3.0)
        stm = expmap(mc1100, hid, z0, 0, T, stm=True).stm
        fd = np.empty((6, 6))
        for i in range(6):
            e = np.zeros(6)
            e[i] = eps
            fd[:, i] = (expmap(mc1100, hid, z0 + e, 0, T).zT - expmap(mc1100, hid, z0 - e, 0, T).zT) / (2 * eps)
        worst = max(worst, np.linalg.norm(stm - fd) / max(np.linalg.norm(fd), 1.0))
    assert record(4, "STM vs central differences", worst <= 1e-5, f"worst relative {worst:.1e} on 100 points")


# ---------------------------------------------------------------------------
# 5

def test_criterion_5_handoffs(scenario):
    hand = scenario["milestones"]["handoffs"]
    ok = True
    for name in ("h2a", "h3", "h4", "h5"):
        d = hand[name]
        ok &= record(5, f"{name} state", d["state"] <= 1e-5, f"{d['state']:.1e}")
    d = hand["h5"]
    ok &= record(5, "h5 costate", d["costate_from"] == 0.0 and d["costate"] <= 1e-5,
                 f"{d['costate']:.1e} over [0, tf]")
    assert ok


# ---------------------------------------------------------------------------
# 6

def test_criterion_6_path_health(scenario):
    paths = scenario["milestones"]["paths"]
    assert set(paths) == {"h1", "h2a", "h2b", "h3", "h4", "h5"}
    ok = True
    for name, p in paths.items():
        ok &= record(6, f"{name} drift", p["max_drift"] <= 1e-4, f"{p['max_drift']:.1e}")
        ok &= record(6, f"{name} corrected", p["corrected_residual"] <= 1e-8,
                     f"{p['corrected_residual']:.1e}")
    assert ok
