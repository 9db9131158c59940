"""Command-line front end.

Exit codes: 0 success, 1 numerical failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .continuation import (
    ContinuationError, HOMOTOPIES, follow, get_homotopy, monitors_for, write_events_json,
    write_path_csv,
)
from .flow import IntegrationError, write_trajectory_csv
from .model import Bounds, ConfigError, load_config, normalize
from .scenario import (
    HANDOFFS, ScenarioError, run_imax_leg, run_scenario, start_from_previous, verify_gamma_plus,
)
from .shooting import (
    STRUCTURES, SolveReport, check_admissible, get_structure, load_report, multistart_s1, solve,
    trajectory_rows,
)

log = logging.getLogger("evcar")

DEFAULT_BOUNDS = {"imax": 1100.0, "vmax": 110.0, "alphaf": 100.0}
AUTO_TARGET = {"imax": 150.0, "vmax": 10.0}
S1_GUESS = (0.3615, 6.4479, 0.2416, 5.6156)

LEGS_HELP = """legs of imax150:
  h1   S1 (g+) along i_max from 1100 down to the c1 contact
  h2a  S2 (g+ gc1 g+) along i_max down to 150
  h2b  S2 along v_max from 110 down to the c3 contact
  h3   S3 (g+ gc1 g+ g- g+ g+) down to the boundary control u_c3 = 1
  h4   S4 (g+ gc1 g+ g- gc3) down to the vanishing of the middle bang arc
  h5   S5 (g+ gc1 g- gc3) down to v_max = --vmin
"""


class UsageError(Exception):
    pass


def _bounds(args, cfg_bounds: dict) -> Bounds:
    vals = dict(DEFAULT_BOUNDS)
    vals.update(cfg_bounds)
    for key in DEFAULT_BOUNDS:
        v = getattr(args, key, None)
        if v is not None:
            vals[key] = v
    return Bounds(vals["imax"], vals["vmax"], vals["alphaf"])


def _write_report(rep: SolveReport, out: Path, stem: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{stem}.json"
    rep.to_json(path)
    if rep.converged:
        try:
            write_trajectory_csv(out / f"traj_{stem}.csv", trajectory_rows(rep.mc, rep.structure, rep.y))
        except IntegrationError as exc:
            log.warning("trajectory not written: %s", exc)
    return path


# ---------------------------------------------------------------------------
# commands

def cmd_solve(args) -> int:
    params, cfg_bounds = load_config(args.config)
    st = get_structure(args.structure)
    if args.init:
        sid, y0, mc_init, _ = load_report(args.init)
        if sid != st.id:
            raise UsageError(f"--init report holds {sid}, but --structure is {st.id}")
        b = mc_init.bounds
        cfg_bounds = {"imax": b.i_max, "vmax": b.v_max, "alphaf": b.alpha_f, **cfg_bounds}
    mc = normalize(params, _bounds(args, cfg_bounds))
    if args.init:
        rep = solve(mc, st, y0, tol=args.tol)
    elif st.id == "S1":
        rep = solve(mc, st, S1_GUESS, tol=args.tol)
        if not (rep.converged and rep.admissibility.admissible):
            best, _ = multistart_s1(mc, tol=args.tol)
            rep = best or rep
    else:
        raise UsageError(f"{st.id} needs a starting point: pass --init report.json")
    path = _write_report(rep, Path(args.out), args.name or f"solve_{st.id.lower()}")
    print(f"{st.id} ({st.label}): {rep.message}, residual {rep.residual:.3e}, "
          f"tf = {st.get(rep.y, 'tf'):.6f}")
    if rep.admissibility is not None and not rep.admissibility.admissible:
        print("not admissible: " + "; ".join(rep.admissibility.flags))
    print(f"report: {path}")
    return 0 if rep.converged else 1


def _default_start(name: str, params, cfg_bounds: dict):
    """Starting zero of a homotopy computed from the preceding legs."""
    b = {**DEFAULT_BOUNDS, **cfg_bounds}
    if name == "h1":
        mc = normalize(params, Bounds(b["imax"], b["vmax"], b["alphaf"]))
        rep = solve(mc, "S1", S1_GUESS)
        if not rep.converged:
            rep, _ = multistart_s1(mc)
            if rep is None:
                raise ScenarioError("no bang-arc solution to start h1")
        return mc, rep.y, mc.bounds.i_max, None
    if name in ("h2a", "h2b"):
        leg = run_imax_leg(params, v_max=b["vmax"], alpha_f=b["alphaf"], i_start=b["imax"])
        if name == "h2a":
            h1 = leg["legs"][0].path
            return h1.base, h1.event.y, h1.event.lam, "S1"
        mc, y = leg["sol_end"]
        return mc, y, mc.bounds.v_max, None
    from .scenario import run_vmax_leg
    sol = run_imax_leg(params, v_max=b["vmax"], alpha_f=b["alphaf"], i_start=b["imax"])["sol_end"]
    order = ["h2b", "h3", "h4", "h5"]
    # run the chain and stop at the leg preceding the requested one
    vm = run_vmax_leg(sol, v_end=AUTO_TARGET["vmax"])
    prev = vm["legs"][order.index(name) - 1]
    return prev.path.base, prev.event.y, prev.event.lam, get_homotopy(prev.name).structure


def cmd_continue(args) -> int:
    params, cfg_bounds = load_config(args.config)
    hom = get_homotopy(args.homotopy)
    target = args.target_imax if args.target_imax is not None else args.target_vmax
    if target is not None:
        given = "imax" if args.target_imax is not None else "vmax"
        if given != hom.lam:
            raise UsageError(f"{hom.name} runs along {hom.lam}; use --target-{hom.lam}")
    elif not args.auto:
        raise UsageError("give --target-imax, --target-vmax or --auto")
    if target is None:
        target = AUTO_TARGET[hom.lam]

    if args.from_report:
        sid, y, mc, _ = load_report(args.from_report)
        lam = mc.lam(hom.lam)
        if sid == hom.structure:
            prev = None
        elif hom.name in HANDOFFS and sid == HANDOFFS[hom.name].previous:
            prev = sid
        else:
            allowed = [hom.structure] + ([HANDOFFS[hom.name].previous] if hom.name in HANDOFFS else [])
            raise UsageError(f"{hom.name} continues {hom.structure}; report holds {sid} "
                             f"(expected one of {allowed})")
    else:
        mc, y, lam, prev = _default_start(hom.name, params, cfg_bounds)

    base = mc
    if prev is not None:
        y, lam, _, _ = start_from_previous(hom, base, y, lam)
    monitors = monitors_for(hom) if args.auto else ()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        res = follow(hom, base, y, lam, target, monitors=monitors)
    except ContinuationError as exc:
        print(f"{hom.name}: {exc}", file=sys.stderr)
        if exc.last is not None:
            print(json.dumps({"lambda": exc.last.lam, "y": exc.last.y.tolist(),
                              "residual": exc.last.residual}), file=sys.stderr)
        return 1
    write_path_csv(out / f"path_{hom.name}.csv", res)
    events = [res.event] if res.event else []
    write_events_json(out / "events.json", events, append=True)
    end_mc = hom.model(base, res.end.lam)
    rep = SolveReport(hom.structure, res.corrected_residual <= 1e-8, res.corrected_residual, 0,
                      np.asarray(res.end.y), end_mc, "path end point")
    rep.admissibility = check_admissible(end_mc, hom.structure, rep.y)
    _write_report(rep, out, f"{hom.name}_end")
    print(f"{hom.name}: {len(res.points)} points, lambda {lam:.6f} -> {res.end.lam:.6f}, "
          f"max drift {res.max_drift:.3e}, corrected residual {res.corrected_residual:.3e}")
    if res.event:
        print(f"event {res.event.kind} at {hom.lam} = {res.event.lam:.6f}")
    return 0 if rep.converged else 1


def cmd_scenario(args) -> int:
    params, _ = load_config(args.config)
    result = run_scenario(params, out_dir=args.out, v_min=args.vmin, figures=not args.no_figures)
    ms = result["milestones"]
    for key in ("i_max_c1", "v_max_c3", "v_max_gc3", "v_max_gc3_oracle", "v_max_plus"):
        if key in ms:
            print(f"{key:18s} {ms[key]:.6f}")
    for err in ms["errors"]:
        print(f"error: {err}", file=sys.stderr)
    print(f"runtime {ms['runtime_s']:.1f} s; results in {args.out}")
    return 1 if ms["errors"] else 0


def cmd_verify(args) -> int:
    params, cfg_bounds = load_config(args.config)
    res = verify_gamma_plus(params, grid_n=args.grid, i_max=args.imax, v_max=args.vmax,
                            alpha_f=args.alphaf, workers=args.workers)
    print(f"grid {res['grid_n']}x{res['grid_n']}: {res['zero_crossings']} switching-function "
          f"crossings, min |phi| = {res['min_abs_phi']:.3e}")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(res, indent=2))
    return 0 if res["zero_crossings"] == 0 and not res["failures"] else 1


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evcar", description="Minimum-time control of an electric car "
                                "with current and speed constraints by indirect shooting.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file with car parameters and bounds")

    s = sub.add_parser("solve", help="solve one shooting problem")
    common(s)
    s.add_argument("--structure", required=True, type=str.upper, choices=sorted(STRUCTURES))
    s.add_argument("--imax", type=float)
    s.add_argument("--vmax", type=float)
    s.add_argument("--alphaf", type=float)
    s.add_argument("--init", help="solve report whose y seeds Newton")
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--out", default=".")
    s.add_argument("--name", help="file stem of the outputs")
    s.set_defaults(func=cmd_solve)

    c = sub.add_parser("continue", help="follow one homotopy")
    common(c)
    c.add_argument("--homotopy", required=True, type=str.lower, choices=sorted(HOMOTOPIES))
    c.add_argument("--from", dest="from_report",
                   help="solve report to start from (same structure, or the preceding one at its event)")
    g = c.add_mutually_exclusive_group()
    g.add_argument("--target-imax", type=float)
    g.add_argument("--target-vmax", type=float)
    c.add_argument("--auto", action="store_true", help="stop at the first structure-change event")
    c.add_argument("--out", default=".")
    c.set_defaults(func=cmd_continue)

    sc = sub.add_parser("scenario", help="full pipeline", epilog=LEGS_HELP,
                        formatter_class=argparse.RawDescriptionHelpFormatter)
    common(sc)
    sc.add_argument("name", choices=["imax150"])
    sc.add_argument("--out", default="results")
    sc.add_argument("--vmin", type=float, default=10.0)
    sc.add_argument("--no-figures", action="store_true")
    sc.set_defaults(func=cmd_scenario)

    v = sub.add_parser("verify", help="optimality check of the bang arc")
    common(v)
    v.add_argument("check", choices=["bang-optimality"])
    v.add_argument("--grid", type=int, default=50)
    v.add_argument("--imax", type=float, default=1200.0)
    v.add_argument("--vmax", type=float, default=120.0)
    v.add_argument("--alphaf", type=float, default=100.0)
    v.add_argument("--workers", type=int)
    v.add_argument("--out", help="JSON file for the full result")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"evcar: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"evcar: error: {exc}", file=sys.stderr)
        return 2
    except (ScenarioError, ContinuationError, IntegrationError) as exc:
        print(f"evcar: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
