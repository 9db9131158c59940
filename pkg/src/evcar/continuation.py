"""Differential path following of shooting zeros along i_max or v_max.

The path ``h(y, lam) = 0`` is traced by integrating the unit tangent of the
bordered Jacobian ``[dh/dy | dh/dlam]`` in arclength with RK4.  The parameter
is rescaled by the leg range so both blocks have comparable weight.  Steps are
not corrected by default; a Newton correction at fixed ``lam`` is applied at
the end point and during event localization.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from types import SimpleNamespace
from typing import Callable, Optional, Sequence

import numpy as np

from .flow import IntegrationError
from .model import ModelConstants
from .shooting import (
    check_admissible, eval_shooting, eval_with_jacobian, get_structure, solve,
)

log = logging.getLogger(__name__)

DRIFT_CEILING = 1e-4


class ContinuationError(RuntimeError):
    def __init__(self, message: str, last: Optional["PathPoint"] = None):
        super().__init__(message)
        self.last = last


@dataclass(frozen=True)
class Homotopy:
    name: str
    structure: str
    lam: str          # "imax" or "vmax"

    def model(self, base: ModelConstants, lam: float) -> ModelConstants:
        return base.with_lam(self.lam, lam)

    def residual(self, base: ModelConstants, y, lam: float) -> np.ndarray:
        return eval_shooting(self.model(base, lam), self.structure, y)


HOMOTOPIES = {
    "h1": Homotopy("h1", "S1", "imax"),
    "h2a": Homotopy("h2a", "S2", "imax"),
    "h2b": Homotopy("h2b", "S2", "vmax"),
    "h3": Homotopy("h3", "S3", "vmax"),
    "h4": Homotopy("h4", "S4", "vmax"),
    "h5": Homotopy("h5", "S5", "vmax"),
}


@dataclass(frozen=True)
class FunctionHomotopy:
    """``h(y, lam) = 0`` given by callables; ``jacobian(y, lam)`` returns (dh/dy, dh/dlam)."""
    name: str
    fn: Callable[[np.ndarray, float], np.ndarray]
    jacobian: Callable[[np.ndarray, float], tuple]
    structure: Optional[str] = None
    lam: str = "lambda"

    def model(self, base, lam: float):
        return base

    def residual(self, base, y, lam: float) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.fn(np.asarray(y, dtype=float), lam), dtype=float))


def get_homotopy(name) -> Homotopy:
    if isinstance(name, (Homotopy, FunctionHomotopy)):
        return name
    try:
        return HOMOTOPIES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown homotopy {name!r}; expected one of {sorted(HOMOTOPIES)}") from None


@dataclass
class PathPoint:
    y: np.ndarray
    lam: float
    s: float
    tangent: np.ndarray
    residual: float
    admissible: Optional[bool] = None
    monitors: dict = field(default_factory=dict)


@dataclass
class Event:
    kind: str
    lam: float
    y: np.ndarray
    residual: float
    bracket: tuple

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lambda": self.lam, "y": self.y.tolist(),
                "residual": self.residual, "bracket": list(self.bracket)}


@dataclass
class Monitor:
    """Scalar function of (model, y); an event fires when it changes sign."""
    kind: str
    fn: Callable[[ModelConstants, np.ndarray], float]


@dataclass
class PathResult:
    homotopy: Homotopy
    points: list
    event: Optional[Event]
    end: PathPoint
    corrected_residual: float
    max_drift: float
    base: Optional[ModelConstants] = None

    @property
    def lam_end(self) -> float:
        return self.end.lam


# ---------------------------------------------------------------------------
# tangent

def null_tangent(A: np.ndarray, prev: Optional[np.ndarray] = None,
                 hint: Optional[np.ndarray] = None, rank_tol: float = 1e-12) -> np.ndarray:
    """Unit null vector of the n x (n+1) matrix ``A`` with orientation memory."""
    n = A.shape[0]
    Q, R = np.linalg.qr(A.T, mode="complete")
    diag = np.abs(np.diag(R[:n, :n]))
    if diag.min() <= rank_tol * max(diag.max(), 1.0):
        raise ContinuationError("singular point on path: bordered Jacobian is rank deficient")
    t = Q[:, n]
    ref = prev if prev is not None else hint
    if ref is not None and np.dot(t, ref) < 0:
        t = -t
    return t


def _bordered(hom: Homotopy, base: ModelConstants, y, lam: float, scale: float):
    if isinstance(hom, FunctionHomotopy):
        F = hom.residual(base, y, lam)
        J, Jl = hom.jacobian(np.asarray(y, dtype=float), lam)
        J = np.atleast_2d(np.asarray(J, dtype=float))
        Jl = np.atleast_1d(np.asarray(Jl, dtype=float))
    else:
        F, J, Jl = eval_with_jacobian(hom.model(base, lam), hom.structure, y, hom.lam)
    return F, np.column_stack([J, Jl * scale])


def tangent(hom, base: ModelConstants, y, lam: float, prev=None, scale: float = 1.0,
            direction: float = -1.0) -> np.ndarray:
    """Unit tangent in (y, lam/scale); without ``prev`` lam moves along ``direction``."""
    hom = get_homotopy(hom)
    _, A = _bordered(hom, base, y, lam, scale)
    hint = None
    if prev is None:
        hint = np.zeros(A.shape[1])
        hint[-1] = direction
    return null_tangent(A, prev, hint)


# ---------------------------------------------------------------------------
# path following

def _correct(hom: Homotopy, base: ModelConstants, y, lam: float, tol: float = 1e-8):
    """Newton at fixed lambda; returns an object with y, residual, converged, message."""
    if not isinstance(hom, FunctionHomotopy):
        return solve(hom.model(base, lam), hom.structure, y, tol=tol, max_iter=30, check=False)
    y = np.array(y, dtype=float)
    F = hom.residual(base, y, lam)
    for _ in range(30):
        if np.linalg.norm(F) <= tol:
            break
        J = np.atleast_2d(hom.jacobian(y, lam)[0])
        y = y - np.linalg.solve(J, F)
        F = hom.residual(base, y, lam)
    norm = float(np.linalg.norm(F))
    return SimpleNamespace(y=y, residual=norm, converged=norm <= tol,
                           message="converged" if norm <= tol else "maximum iterations reached")


def _monitor_values(monitors, mc, y):
    out = {}
    for m in monitors:
        try:
            out[m.kind] = float(m.fn(mc, y))
        except IntegrationError:
            out[m.kind] = np.nan
    return out


def detect_event(hom, base: ModelConstants, monitor: Monitor, a: PathPoint, b: PathPoint,
                 lam_tol: float = 1e-4, max_iter: int = 60) -> Event:
    """Bisection on lambda between two path points bracketing a monitor sign change.

    Each probe is re-solved at fixed lambda from the linear interpolant of the
    bracketing points.
    """
    hom = get_homotopy(hom)
    fa = monitor.fn(hom.model(base, a.lam), a.y)
    fb = monitor.fn(hom.model(base, b.lam), b.y)
    if not np.sign(fa) * np.sign(fb) <= 0:
        raise ContinuationError(f"event {monitor.kind}: samples do not bracket a sign change")
    lo, hi = (a.lam, np.asarray(a.y)), (b.lam, np.asarray(b.y))
    flo = fa
    best_y = hi[1]
    for _ in range(max_iter):
        if abs(hi[0] - lo[0]) <= lam_tol:
            break
        lam_m = 0.5 * (lo[0] + hi[0])
        w = (lam_m - lo[0]) / (hi[0] - lo[0])
        y_guess = (1 - w) * lo[1] + w * hi[1]
        rep = _correct(hom, base, y_guess, lam_m)
        if not rep.converged:
            raise ContinuationError(f"event {monitor.kind}: re-solve failed at lambda = {lam_m:.6f} "
                                    f"({rep.message})")
        fm = monitor.fn(hom.model(base, lam_m), rep.y)
        if np.sign(fm) == np.sign(flo) and fm != 0:
            lo, flo = (lam_m, rep.y), fm
        else:
            hi = (lam_m, rep.y)
            best_y = rep.y
    # secant refinement inside the bracket
    (la, ya), (lb, yb) = lo, hi
    fa_, fb_ = flo, monitor.fn(hom.model(base, hi[0]), hi[1])
    lam_ev, y_ev = 0.5 * (la + lb), best_y
    for _ in range(8):
        if fb_ == fa_:
            break
        lam_s = lb - fb_ * (lb - la) / (fb_ - fa_)
        if not min(lo[0], hi[0]) <= lam_s <= max(lo[0], hi[0]):
            break
        w = (lam_s - la) / (lb - la) if lb != la else 0.0
        rep = _correct(hom, base, (1 - w) * ya + w * yb, lam_s, tol=1e-11)
        if not rep.converged:
            break
        fs = monitor.fn(hom.model(base, lam_s), rep.y)
        lam_ev, y_ev = lam_s, rep.y
        (la, ya, fa_), (lb, yb, fb_) = (lb, yb, fb_), (lam_s, rep.y, fs)
        if abs(fs) < 1e-12 or abs(lb - la) < 1e-12:
            break
    rep = _correct(hom, base, y_ev, lam_ev)
    if not rep.converged:
        raise ContinuationError(f"event {monitor.kind}: re-solve failed at lambda = {lam_ev:.6f}")
    return Event(monitor.kind, lam_ev, rep.y, float(rep.residual), (lo[0], hi[0]))


def mp_correct(hom, base: ModelConstants, y, lam: float, tol: float = 1e-10,
               max_iter: int = 20, scale: float = 1.0):
    """Gauss-Newton on the underdetermined system h(y, lam) = 0.

    Each step is the minimal-norm solution, so lam may move; unlike Newton at
    fixed lam this converges at folds of the path.
    Returns (y, lam, residual).
    """
    hom = get_homotopy(hom)
    y = np.array(y, dtype=float)
    F, A = _bordered(hom, base, y, lam, scale)
    norm = float(np.linalg.norm(F))
    for _ in range(max_iter):
        if norm <= tol:
            break
        step = np.linalg.lstsq(A, -F, rcond=None)[0]
        y_new, lam_new = y + step[:-1], lam + step[-1] * scale
        F_new, A_new = _bordered(hom, base, y_new, lam_new, scale)
        n_new = float(np.linalg.norm(F_new))
        if not n_new < norm:
            break
        y, lam, F, A, norm = y_new, lam_new, F_new, A_new, n_new
    return y, lam, norm


def open_arc(hom, base: ModelConstants, y, lam: float, t_start: str, t_end: str,
             eps: float, tol: float = 1e-11, max_iter: int = 30):
    """Leave a branch point along the branch on which an arc opens.

    Solves ``h(y, lam) = 0`` together with ``y[t_end] - y[t_start] = eps`` for
    (y, lam), starting from the degenerate zero with the arc split evenly.
    Returns (y, lam, residual) or raises ContinuationError.
    """
    hom = get_homotopy(hom)
    st = get_structure(hom.structure)
    ia, ib = st.slices[t_start].start, st.slices[t_end].start
    y = np.array(y, dtype=float)
    mid = 0.5 * (y[ia] + y[ib])
    y[ia], y[ib] = mid - 0.5 * eps, mid + 0.5 * eps
    row = np.zeros(st.dim + 1)
    row[ib], row[ia] = 1.0, -1.0

    def system(y, lam):
        F, A = _bordered(hom, base, y, lam, 1.0)
        return np.append(F, y[ib] - y[ia] - eps), np.vstack([A, row])

    G, B = system(y, lam)
    norm = float(np.linalg.norm(G))
    for _ in range(max_iter):
        if norm <= tol:
            break
        step = np.linalg.solve(B, -G)
        alpha = 1.0
        while alpha > 1e-6:
            try:
                G2, B2 = system(y + alpha * step[:-1], lam + alpha * step[-1])
                n2 = float(np.linalg.norm(G2))
            except IntegrationError:
                n2 = np.inf
            if n2 < norm:
                break
            alpha *= 0.5
        else:
            break
        y, lam = y + alpha * step[:-1], lam + alpha * step[-1]
        G, B, norm = G2, B2, n2
    if norm > 1e-8:
        raise ContinuationError(f"could not open arc {t_start}..{t_end}: residual {norm:.3e}")
    return y, lam, norm


def follow(hom, base: ModelConstants, y0, lam0: float, lam_target: float,
           monitors: Sequence[Monitor] = (), ds: float = 0.1, ds_min: float = 1e-6,
           ds_max: float = 0.1, correct: bool = False, drift_ceiling: float = DRIFT_CEILING,
           check: bool = True, max_steps: int = 5000, start_hint: Optional[np.ndarray] = None,
           scale: Optional[float] = None) -> PathResult:
    """Follow the zero path from ``(y0, lam0)`` toward ``lam_target``.

    Stops at the first monitor sign change (the event is localized by
    bisection) or at ``lam_target``, where a Newton correction is applied.
    """
    hom = get_homotopy(hom)
    y = np.array(y0, dtype=float)
    lam = float(lam0)
    scale = float(scale or abs(lam_target - lam0) or 1.0)
    direction = np.sign(lam_target - lam0) or -1.0
    u_target = lam_target / scale

    F, A = _bordered(hom, base, y, lam, scale)
    res0 = float(np.linalg.norm(F))
    if res0 > 1e-8:
        raise ContinuationError(f"start point residual {res0:.3e} exceeds 1e-8")
    hint = start_hint
    if hint is None:
        hint = np.zeros(A.shape[1])
        hint[-1] = direction
    t_cur = null_tangent(A, None, hint)
    if t_cur[-1] * direction <= 0 and start_hint is None:
        raise ContinuationError("path turns back at the start point")

    def point(y, lam, s, t, res):
        mc = hom.model(base, lam)
        adm = check_admissible(mc, hom.structure, y).admissible if check and hom.structure else None
        return PathPoint(y.copy(), lam, s, t.copy(), res, adm, _monitor_values(monitors, mc, y))

    pts = [point(y, lam, 0.0, t_cur, res0)]
    s = 0.0
    max_drift = res0
    event = None

    def tan_at(yv, lv, prev):
        _, Av = _bordered(hom, base, yv, lv, scale)
        return null_tangent(Av, prev)

    for _ in range(max_steps):
        u = lam / scale
        remaining = (u_target - u) * direction
        if remaining <= 1e-12:
            break
        h = ds
        # do not overshoot the target by much: aim at it when close
        if t_cur[-1] * direction > 0:
            h = min(h, remaining / abs(t_cur[-1]))
        try:
            v = np.concatenate([y, [u]])
            k1 = t_cur
            k2 = tan_at(*_split(v + 0.5 * h * k1, scale), k1)
            k3 = tan_at(*_split(v + 0.5 * h * k2, scale), k2)
            k4 = tan_at(*_split(v + h * k3, scale), k3)
            v_new = v + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            y_new, lam_new = _split(v_new, scale)
            F_new, A_new = _bordered(hom, base, y_new, lam_new, scale)
            t_new = null_tangent(A_new, k4)
        except (IntegrationError, ContinuationError, np.linalg.LinAlgError) as exc:
            if ds <= ds_min:
                raise ContinuationError(f"step failed at lambda = {lam:.6f}: {exc}", pts[-1]) from exc
            ds = max(ds / 2, ds_min)
            continue
        res = float(np.linalg.norm(F_new))
        cosang = float(np.dot(t_new, t_cur))
        if correct and res > 1e-10:
            rep = _correct(hom, base, y_new, lam_new, tol=1e-10)
            if rep.converged:
                y_new, res = rep.y, rep.residual
                F_new, A_new = _bordered(hom, base, y_new, lam_new, scale)
                t_new = null_tangent(A_new, t_cur)
        if res > drift_ceiling or cosang < 0.99:
            if ds <= ds_min:
                raise ContinuationError(
                    f"residual drift {res:.3e} above ceiling at lambda = {lam_new:.6f}"
                    if res > drift_ceiling else f"tangent turning too fast at lambda = {lam:.6f}",
                    pts[-1])
            ds = max(ds / 2, ds_min)
            continue
        if cosang > 0.999:
            ds = min(2 * ds, ds_max)
        s += h
        y, lam, t_cur = y_new, lam_new, t_new
        max_drift = max(max_drift, res)
        pts.append(point(y, lam, s, t_cur, res))
        # monitors
        for m in monitors:
            f0, f1 = pts[-2].monitors.get(m.kind), pts[-1].monitors.get(m.kind)
            if f0 is not None and f1 is not None and np.isfinite(f0) and np.isfinite(f1) \
                    and np.sign(f0) != np.sign(f1) and f0 != 0:
                event = detect_event(hom, base, m, pts[-2], pts[-1])
                break
        if event is not None:
            break
        if (lam - lam_target) * direction >= -1e-12:
            break

    if event is not None:
        end_y, end_lam, corrected = event.y, event.lam, event.residual
    else:
        # the last step may overshoot slightly; the Newton correction lands on the target
        reached = (lam - lam_target) * direction >= -1e-6 * scale
        end_lam = lam_target if reached else lam
        rep = _correct(hom, base, y, end_lam)
        if not rep.converged:
            raise ContinuationError(f"end point correction failed at lambda = {end_lam:.6f}: {rep.message}",
                                    pts[-1])
        end_y, corrected = rep.y, rep.residual
    end = point(np.asarray(end_y), end_lam, s, t_cur, float(corrected))
    return PathResult(hom, pts, event, end, float(corrected), max_drift, base)


def _split(v, scale):
    return v[:-1], float(v[-1] * scale)


# ---------------------------------------------------------------------------
# export

def write_path_csv(path, result: PathResult) -> None:
    st = get_structure(result.homotopy.structure)
    names = [n for n in st.slices if not n.startswith("z")]
    cols = []
    for n in names:
        cols += [f"{n}_{i}" for i in range(3)] if n == "p0" else [n]
    mon = list(result.points[0].monitors) if result.points else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "lambda", *cols, *mon, "residual", "admissible"])
        for p in result.points + [result.end]:
            vals = []
            for n in names:
                v = st.get(p.y, n)
                vals += list(np.atleast_1d(v))
            w.writerow([f"{p.s:.10g}", f"{p.lam:.10g}", *(f"{v:.12g}" for v in vals),
                        *(f"{p.monitors.get(m, np.nan):.10g}" for m in mon),
                        f"{p.residual:.3e}", "" if p.admissible is None else int(p.admissible)])


def write_events_json(path, events: Sequence[Event], append: bool = True) -> None:
    records = []
    if append:
        try:
            with open(path) as fh:
                records = json.load(fh)
        except (OSError, json.JSONDecodeError):
            records = []
    records += [e.to_dict() for e in events]
    with open(path, "w") as fh:
        json.dump(records, fh, indent=2)


# ---------------------------------------------------------------------------
# structure-change monitors used by the scenario legs

def _max_state(comp):
    def fn(mc, y, structure):
        from .shooting import trajectory_max
        return trajectory_max(mc, structure, y, comp)[0] - 1.0
    return fn


def monitors_for(hom) -> list[Monitor]:
    """Sign-change monitors signalling the end of validity of a structure."""
    hom = get_homotopy(hom)
    st = get_structure(hom.structure)

    def state(comp):
        f = _max_state(comp)
        return lambda mc, y: f(mc, y, st)

    def length(a, b):
        return lambda mc, y: st.get(y, b) - st.get(y, a)

    def scalar(name):
        return lambda mc, y: st.get(y, name)

    from .model import u_c3
    table = {
        "h1": [Monitor("max_c1", state(0))],
        "h2a": [Monitor("max_c3", state(2))],
        "h2b": [Monitor("max_c3", state(2))],
        "h3": [Monitor("u_c3", lambda mc, y: float(u_c3(mc.k)) - 1.0)],
        "h4": [Monitor("nu2", scalar("nu2")), Monitor("t3-t2", length("t2", "t3"))],
        "h5": [Monitor("t3-t2", length("t2", "t3"))],
    }
    return table[hom.name]
