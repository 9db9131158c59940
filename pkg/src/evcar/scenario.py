"""End-to-end pipeline: bang-arc optimality check, the i_max leg at v_max = 110
and the v_max leg at i_max = 150, with structure hand-offs between homotopies.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .continuation import (
    ContinuationError, PathResult, follow, get_homotopy, monitors_for, mp_correct, open_arc,
    write_events_json, write_path_csv,
)
from .flow import expmap, write_trajectory_csv
from .hamiltonians import HamiltonianId as HId
from .model import Bounds, CarParams, ModelConstants, normalize, vmax_gamma_c3
from .shooting import (
    check_admissible, get_structure, multistart_s1, sample_arcs, solve, trajectory_max,
    trajectory_rows,
)

log = logging.getLogger(__name__)

T_BAR = 5.6156
OPEN_EPS = 1e-4


class ScenarioError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# bang-arc optimality

def _phi_profile(mc: ModelConstants, x_f, t_bar: float, n: int = 400):
    zf = np.array([x_f[0], x_f[1], x_f[2], 0.0, 1.0, 0.0])
    res = expmap(mc, HId.HPlus, zf, t_bar, 0.0, dense=True)
    t = np.unique(np.concatenate([np.linspace(0.0, t_bar, n), res.ts]))
    return t, mc.k[6] * res.sample(t)[:, 3]


def verify_gamma_plus(params: CarParams | None = None, grid_n: int = 50, i_max: float = 1200.0,
                      v_max: float = 120.0, alpha_f: float = 100.0, t_bar: float = T_BAR,
                      workers: int | None = None) -> dict:
    """Backward switching functions of the bang arc from the final manifold.

    The final state ranges over a ``grid_n x grid_n`` grid of
    ``[-1, 1] x {1} x [0, 1]`` with costate (0, 1, 0).  A zero of the switching
    function away from the final time would allow a switch; none means the
    bang arc is the only candidate.
    """
    mc = normalize(params or CarParams(), Bounds(i_max, v_max, alpha_f))
    if grid_n < 1:
        raise ValueError("grid_n must be >= 1")
    if grid_n == 1:
        points = [(0.0, 1.0, 0.0)]
    else:
        points = [(a, 1.0, b) for a in np.linspace(-1, 1, grid_n) for b in np.linspace(0, 1, grid_n)]
    delta = 1e-3 * t_bar

    def one(xf):
        try:
            t, phi = _phi_profile(mc, xf, t_bar)
        except Exception as exc:          # reported per point
            return xf, None, None, str(exc)
        mask = t <= t_bar - delta
        seg = phi[mask]
        crossings = int(np.count_nonzero(np.sign(seg[:-1]) * np.sign(seg[1:]) < 0)
                        + np.count_nonzero(seg == 0))
        return xf, crossings, float(np.min(np.abs(seg))), None

    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(one, points))
    failures = [{"x_f": list(r[0]), "error": r[3]} for r in results if r[3]]
    ok = [r for r in results if r[3] is None]
    crossings = sum(r[1] for r in ok)
    worst = min(ok, key=lambda r: r[2]) if ok else None
    return {
        "grid_n": grid_n, "points": len(points), "t_bar": t_bar, "delta": delta,
        "bounds": {"imax": i_max, "vmax": v_max, "alphaf": alpha_f},
        "zero_crossings": crossings,
        "points_with_crossings": [list(r[0]) for r in ok if r[1]],
        "min_abs_phi": worst[2] if worst else None,
        "min_abs_phi_at": list(worst[0]) if worst else None,
        "failures": failures,
    }


# ---------------------------------------------------------------------------
# hand-off constructions: degenerate zero of the next structure at the event

def seed_s2(mc: ModelConstants, y1) -> np.ndarray:
    """S2 zero with an empty boundary arc at the contact of the bang arc with c1."""
    s1 = get_structure("S1")
    _, _, tau = trajectory_max(mc, s1, y1, 0)
    z0 = np.r_[0.0, 0.0, 0.0, s1.get(y1, "p0")]
    k = mc.k

    def xdot1(t):
        z = expmap(mc, HId.HPlus, z0, 0.0, t).zT
        return k[0] * z[0] + k[1] * z[2] + k[6]
    try:
        tau = brentq(xdot1, tau - 1e-3, tau + 1e-3, xtol=1e-15)
    except ValueError:
        pass
    z_tau = expmap(mc, HId.HPlus, z0, 0.0, tau).zT
    nu2 = -z_tau[3]
    z_on = z_tau.copy()
    z_on[3] = 0.0
    p0 = expmap(mc, HId.HPlus, z_on, tau, 0.0).zT[3:]
    return get_structure("S2").pack(dict(p0=p0, tf=s1.get(y1, "tf"), t1=tau, t2=tau, nu2=nu2,
                                         z1=z_on, z2=z_on))


def seed_s3(mc: ModelConstants, y2) -> np.ndarray:
    """S3 zero with an empty negative arc, at the contact of the last bang arc with c3.

    The state path is that of S2.  A jump on p3 at the contact time t5 is
    chosen so that the switching function has a double zero at some earlier
    time, found as a root of p1 q3 - p3 q1 where q is the adjoint flow of e3.
    """
    s2 = get_structure("S2")
    d = s2.unpack(y2)
    _, arc, t5 = trajectory_max(mc, s2, y2, 2)
    if arc != 2:
        raise ScenarioError("c3 contact is not on the last bang arc")
    z2p = d["z2"].copy()
    z2p[3] -= d["nu2"]
    z5 = expmap(mc, HId.HPlus, z2p, d["t2"], t5).zT
    zq = z5.copy()
    zq[3:] = (0.0, 0.0, 1.0)
    P = expmap(mc, HId.HPlus, z5, t5, d["t2"], dense=True)
    Q = expmap(mc, HId.HPlus, zq, t5, d["t2"], dense=True)

    def g(t):
        p, q = P.sample(t)[0], Q.sample(t)[0]
        return p[3] * q[5] - p[5] * q[3]

    grid = np.linspace(t5, d["t2"], 2001)[1:-1]
    vals = np.array([g(t) for t in grid])
    tau = nu5 = None
    for i in np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]:
        root = brentq(g, grid[i + 1], grid[i], xtol=1e-14)
        p, q = P.sample(root)[0], Q.sample(root)[0]
        nu = -p[3] / q[3]
        if nu <= 0:
            tau, nu5 = root, nu
            break
    if tau is None:
        raise ScenarioError("no double zero of the switching function before the c3 contact")
    z5m = z5.copy()
    z5m[5] += nu5
    z3 = expmap(mc, HId.HPlus, z5m, t5, tau).zT
    z2_after = expmap(mc, HId.HPlus, z3, tau, d["t2"]).zT
    nu2 = -z2_after[3]
    z2 = z2_after.copy()
    z2[3] = 0.0
    z1 = expmap(mc, HId.HC1, z2, d["t2"], d["t1"]).zT
    p0 = expmap(mc, HId.HPlus, z1, d["t1"], 0.0).zT[3:]
    return get_structure("S3").pack(dict(
        p0=p0, tf=d["tf"], t1=d["t1"], t2=d["t2"], nu2=nu2, t3=tau, t4=tau, t5=t5, nu5=nu5,
        z1=z1, z2=z2, z3=z3, z4=z3, z5=z5m))


def seed_s4(mc: ModelConstants, y3) -> np.ndarray:
    """S4 from S3 when the negative arc lands on the c3 equilibrium."""
    u = get_structure("S3").unpack(y3)
    return get_structure("S4").pack(dict(
        p0=u["p0"], tf=u["tf"], t1=u["t1"], t2=u["t2"], nu2=u["nu2"], t3=u["t3"], t4=u["t4"],
        nu4=u["z4"][5], z1=u["z1"], z2=u["z2"], z3=u["z3"], z4=u["z4"]))


def seed_s5(mc: ModelConstants, y4) -> np.ndarray:
    """S5 from S4 once the middle bang arc and its jump have vanished."""
    v = get_structure("S4").unpack(y4)
    return get_structure("S5").pack(dict(
        p0=v["p0"], tf=v["tf"], t1=v["t1"], t2=v["t3"], t3=v["t4"], nu3=v["nu4"],
        z1=v["z1"], z2=v["z3"], z3=v["z4"]))


@dataclass(frozen=True)
class Handoff:
    previous: str                 # predecessor structure
    seed: callable
    opening: Optional[tuple]      # arc to open at a branch point
    costate_after: Optional[str]  # costates compared only after this time


HANDOFFS = {
    "h2a": Handoff("S1", seed_s2, ("t1", "t2"), "t2"),
    "h3": Handoff("S2", seed_s3, ("t3", "t4"), "t5"),
    "h4": Handoff("S3", seed_s4, None, None),
    "h5": Handoff("S4", seed_s5, None, ""),
}


def state_path(mc: ModelConstants, structure, y, t):
    """Phase point at times ``t`` (right limits at jumps)."""
    st = get_structure(structure)
    t = np.asarray(t, dtype=float)
    out = np.full((len(t), 6), np.nan)
    for j, (arc, ts, zs) in enumerate(sample_arcs(mc, st, y, 2)):
        t0 = 0.0 if arc.t_start is None else st.get(y, arc.t_start)
        t1 = st.get(y, arc.t_end)
        if t1 <= t0:
            continue
        res = expmap(mc, arc.hid, zs[0], t0, t1, dense=True)
        mask = (t >= t0) & (t <= t1)
        if mask.any():
            out[mask] = res.sample(t[mask])
    return out


def compare_paths(mc_old, st_old, y_old, mc_new, st_new, y_new, costate_after=None, n=2001):
    """Largest state (and costate) mismatch between two solutions."""
    tf = min(get_structure(st_old).get(y_old, "tf"), get_structure(st_new).get(y_new, "tf"))
    t = np.linspace(0.0, tf, n)
    a = state_path(mc_old, st_old, y_old, t)
    b = state_path(mc_new, st_new, y_new, t)
    out = {"state": float(np.nanmax(np.abs(a[:, :3] - b[:, :3])))}
    if costate_after is not None:
        t_from = get_structure(st_new).get(y_new, costate_after) if costate_after else 0.0
        m = t > t_from + 1e-6
        out["costate"] = float(np.nanmax(np.abs(a[m, 3:] - b[m, 3:])))
        out["costate_from"] = float(t_from)
    return out


def start_from_previous(hom, base: ModelConstants, y_prev, lam: float):
    """Seed, correct and (at branch points) open the next structure at the event.

    Returns (y_start, lam_start, y_seed, lam_seed) where the seed is the
    degenerate zero used for the consistency check.
    """
    hom = get_homotopy(hom)
    ho = HANDOFFS[hom.name]
    mc = hom.model(base, lam)
    y_seed = ho.seed(mc, y_prev)
    y_seed, lam_seed, res = mp_correct(hom, base, y_seed, lam)
    if res > 1e-8:
        raise ScenarioError(f"{hom.name}: seed correction failed (residual {res:.3e})")
    if ho.opening is None:
        return y_seed, lam_seed, y_seed, lam_seed
    y0, lam0, _ = open_arc(hom, base, y_seed, lam_seed, *ho.opening, OPEN_EPS)
    return y0, lam0, y_seed, lam_seed


# ---------------------------------------------------------------------------
# legs

@dataclass
class Leg:
    name: str
    path: PathResult
    start_lam: float
    handoff: dict = field(default_factory=dict)

    @property
    def event(self):
        return self.path.event


def _follow(hom, base, y, lam, target, **kw) -> PathResult:
    hom = get_homotopy(hom)
    return follow(hom, base, y, lam, target, monitors=monitors_for(hom), **kw)


def _handoff_leg(name, base, prev_struct, y_prev, lam_ev, target, **kw) -> Leg:
    hom = get_homotopy(name)
    ho = HANDOFFS[name]
    y0, lam0, y_seed, lam_seed = start_from_previous(hom, base, y_prev, lam_ev)
    diff = compare_paths(hom.model(base, lam_ev), prev_struct, y_prev,
                         hom.model(base, lam_seed), hom.structure, y_seed, ho.costate_after)
    diff.update(lam_event=lam_ev, lam_seed=lam_seed)
    path = _follow(hom, base, y0, lam0, target, **kw)
    return Leg(name, path, lam0, diff)


def run_imax_leg(params: CarParams | None = None, v_max: float = 110.0, alpha_f: float = 100.0,
                 i_start: float = 1100.0, i_end: float = 150.0, **kw) -> dict:
    """Bang arc at i_start, h1 down to the c1 contact, then h2a down to i_end."""
    params = params or CarParams()
    base = normalize(params, Bounds(i_start, v_max, alpha_f))
    guess = [0.3615, 6.4479, 0.2416, 5.6156]
    sol = solve(base, "S1", guess)
    if not (sol.converged and sol.admissibility.admissible):
        sol, _ = multistart_s1(base)
        if sol is None:
            raise ScenarioError("no admissible bang-arc solution at the start of the i_max leg")
    h1 = _follow("h1", base, sol.y, i_start, i_end, **kw)
    if h1.event is None:
        raise ScenarioError("h1 reached the target without touching c1")
    i_c1 = h1.event.lam
    h2a = _handoff_leg("h2a", base, "S1", h1.event.y, i_c1, i_end, **kw)
    if h2a.event is not None:
        raise ScenarioError(f"h2a stopped at {h2a.event.kind} (i_max = {h2a.event.lam:.4f})")
    return {
        "base": base, "sol_start": sol, "i_max_c1": i_c1,
        "legs": [Leg("h1", h1, i_start), h2a],
        "sol_end": (normalize(params, Bounds(i_end, v_max, alpha_f)), h2a.path.end.y),
    }


def run_vmax_leg(sol: tuple, v_end: float = 10.0, **kw) -> dict:
    """h2b -> h3 -> h4 -> h5 along v_max from an admissible S2 solution."""
    mc, y = sol
    base = mc
    v0 = mc.bounds.v_max
    legs = []
    h2b = _follow("h2b", base, y, v0, v_end, **kw)
    legs.append(Leg("h2b", h2b, v0))
    if h2b.event is None:
        raise ScenarioError("h2b reached the target without touching c3")
    v_c3 = h2b.event.lam
    h3 = _handoff_leg("h3", base, "S2", h2b.event.y, v_c3, v_end, **kw)
    legs.append(h3)
    if h3.event is None:
        raise ScenarioError("h3 reached the target without the boundary control reaching 1")
    v_gc3 = h3.event.lam
    h4 = _handoff_leg("h4", base, "S3", h3.event.y, v_gc3, v_end, **kw)
    legs.append(h4)
    if h4.event is None:
        raise ScenarioError("h4 reached the target without the middle bang arc vanishing")
    v_plus = h4.event.lam
    h5 = _handoff_leg("h5", base, "S4", h4.event.y, v_plus, v_end, **kw)
    legs.append(h5)
    return {
        "v_max_c3": v_c3, "v_max_gc3": v_gc3, "v_max_plus": v_plus,
        "v_max_gc3_oracle": vmax_gamma_c3(mc.params, mc.bounds.i_max, mc.bounds.alpha_f),
        "legs": legs,
    }


# ---------------------------------------------------------------------------
# slice summary

STRUCTURE_OF = {"h1": "S1", "h2a": "S2", "h2b": "S2", "h3": "S3", "h4": "S4", "h5": "S5"}


def slice_rows(legs) -> list[dict]:
    """Flatten path points of v_max legs into table rows (v_max descending)."""
    rows = []
    for leg in legs:
        st = get_structure(STRUCTURE_OF[leg.name])
        pts = list(leg.path.points)
        if leg.path.event is not None and pts:
            # drop samples past the event; the corrected event point closes the leg
            sign = np.sign(pts[0].lam - leg.path.event.lam)
            pts = [p for p in pts if (p.lam - leg.path.event.lam) * sign > 0]
        pts.append(leg.path.end)
        for p in pts:
            u = st.unpack(p.y)
            row = {"homotopy": leg.name, "lambda": p.lam, "structure": st.id, "label": st.label,
                   "residual": p.residual, "admissible": p.admissible}
            row.update({k: v for k, v in u.items() if not k.startswith(("z", "p0"))})
            rows.append(row)
    return rows


def slice_report(rows: list[dict]) -> dict:
    """Structure per v_max range plus monotonicity diagnostics."""
    rows = sorted(rows, key=lambda r: -r["lambda"])
    ranges = []
    for r in rows:
        if ranges and ranges[-1]["structure"] == r["structure"]:
            ranges[-1]["vmax_low"] = r["lambda"]
        else:
            ranges.append({"structure": r["structure"], "label": r["label"],
                           "vmax_high": r["lambda"], "vmax_low": r["lambda"]})
    lam = np.array([r["lambda"] for r in rows])
    tf = np.array([r["tf"] for r in rows])
    h5 = [r for r in rows if r["homotopy"] == "h5"]
    gm = np.array([r["t3"] - r["t2"] for r in h5]) if h5 else np.array([])
    return {
        "ranges": ranges,
        "tf_increases_as_vmax_decreases": bool(np.all(np.diff(tf) >= -1e-6)),
        "all_admissible": all(bool(r["admissible"]) for r in rows),
        "h5_negative_arc_length": {"min": float(gm.min()), "max": float(gm.max())} if gm.size else None,
        "points": len(rows),
        "vmax_range": [float(lam.min()), float(lam.max())] if lam.size else None,
    }


def structure_at(rows: list[dict], v: float) -> str:
    """Structure in force at v_max = v (nearest slice sample)."""
    r = min(rows, key=lambda r: abs(r["lambda"] - v))
    return r["structure"]


def write_slice_csv(path, rows: list[dict]) -> None:
    keys = ["homotopy", "lambda", "structure", "label", "tf", "t1", "t2", "t3", "t4", "t5",
            "nu2", "nu3", "nu4", "nu5", "residual", "admissible"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vmax" if k == "lambda" else k for k in keys])
        for r in rows:
            w.writerow(["" if r.get(k) is None else
                        (f"{r[k]:.10g}" if isinstance(r[k], float) else r[k]) for k in keys])


# ---------------------------------------------------------------------------
# full run

def run_scenario(params: CarParams | None = None, out_dir=None, v_min: float = 10.0,
                 figures: bool = True, **kw) -> dict:
    """Both legs; writes milestones.json, slice.csv, paths, trajectories and figures."""
    params = params or CarParams()
    t_start = time.perf_counter()
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    milestones: dict = {"params": params.__dict__.copy(), "errors": []}
    imax = vmax = None
    try:
        imax = run_imax_leg(params, **kw)
        milestones["i_max_c1"] = imax["i_max_c1"]
    except (ScenarioError, ContinuationError) as exc:
        milestones["errors"].append(f"imax leg: {exc}")
    if imax is not None:
        try:
            vmax = run_vmax_leg(imax["sol_end"], v_end=v_min, **kw)
            for key in ("v_max_c3", "v_max_gc3", "v_max_gc3_oracle", "v_max_plus"):
                milestones[key] = vmax[key]
        except (ScenarioError, ContinuationError) as exc:
            milestones["errors"].append(f"vmax leg: {exc}")
    legs = (imax["legs"] if imax else []) + (vmax["legs"] if vmax else [])
    milestones["handoffs"] = {leg.name: leg.handoff for leg in legs if leg.handoff}
    milestones["paths"] = {
        leg.name: {"points": len(leg.path.points), "start": leg.start_lam, "end": leg.path.end.lam,
                   "max_drift": leg.path.max_drift, "corrected_residual": leg.path.corrected_residual,
                   "event": leg.event.to_dict() if leg.event else None,
                   "all_admissible": all(bool(p.admissible) for p in leg.path.points
                                         if leg.event is None or p is not leg.path.points[-1])}
        for leg in legs}
    rows = slice_rows(vmax["legs"]) if vmax else []
    if rows:
        milestones["slice"] = slice_report(rows)
    if imax:
        s = imax["sol_start"]
        milestones["sol_start"] = {"y": s.y.tolist(), "residual": s.residual}
    milestones["runtime_s"] = time.perf_counter() - t_start
    result = {"milestones": milestones, "imax": imax, "vmax": vmax, "rows": rows, "legs": legs}
    if out:
        _write_outputs(out, result, figures)
    return result


def _milestone_solutions(result) -> list[tuple[str, ModelConstants, str, np.ndarray]]:
    sols = []
    imax, vmax = result["imax"], result["vmax"]
    if imax:
        s = imax["sol_start"]
        sols.append(("s1_imax1100", s.mc, "S1", s.y))
        mc, y = imax["sol_end"]
        sols.append(("s2_imax150_vmax110", mc, "S2", y))
    for leg in result["legs"]:
        hom = get_homotopy(leg.name)
        if leg.event is not None:
            sols.append((f"{leg.name}_event", hom.model(leg.path.base, leg.event.lam),
                         hom.structure, leg.event.y))
    if vmax:
        leg = vmax["legs"][-1]
        hom = get_homotopy(leg.name)
        sols.append((f"{leg.name}_end", hom.model(leg.path.base, leg.path.end.lam), hom.structure,
                     leg.path.end.y))
    return sols


def _write_outputs(out: Path, result: dict, figures: bool) -> None:
    ms = result["milestones"]
    with open(out / "milestones.json", "w") as fh:
        json.dump(ms, fh, indent=2, default=float)
    if result["rows"]:
        write_slice_csv(out / "slice.csv", result["rows"])
    events = []
    for leg in result["legs"]:
        write_path_csv(out / f"path_{leg.name}.csv", leg.path)
        if leg.event:
            events.append(leg.event)
    write_events_json(out / "events.json", events, append=False)
    trajs = []
    for name, mc, st, y in _milestone_solutions(result):
        write_trajectory_csv(out / f"traj_{name}.csv", trajectory_rows(mc, st, y))
        trajs.append((name, mc, st, y))
    if figures:
        from .plots import plot_all
        plot_all(out, result, trajs)
