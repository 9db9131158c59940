"""Multiple-shooting functions for the five arc structures, Newton solver and
a posteriori admissibility checks.

Every structure starts from ``x0 = 0`` with the initial costate ``p0`` unknown.
Interior nodes ``z_i`` are unknowns tied to the flow by matching conditions.
A jump ``nu`` at a node acts on the costate before the next arc as
``p <- p - nu * grad c`` (``grad c1 = e1``, ``grad c3 = e3``).
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize_scalar

from . import _kernels as K
from .flow import IntegrationError, expmap
from .hamiltonians import HamiltonianId as HId
from .model import Bounds, CarParams, ModelConstants, normalize, params_to_dict, u_c1, u_c3

log = logging.getLogger(__name__)

TOL_C = 1e-6
EMPTY_ARC = 1e-9
CSTEP = 1e-30


# ---------------------------------------------------------------------------
# interior and terminal conditions, written for complex-step differentiation

def _c1(z, k): return z[0] - 1.0
def _c3(z, k): return z[2] - 1.0
def _h1(z, k): return k[6] * z[3]
def _uc1(z, k): return -(k[0] + k[1] * z[2]) / k[6] - 1.0
def _f0c3(z, k): return k[3] + k[4] * z[0] + k[5] * z[2] ** 2


CONDITIONS: dict[str, Callable] = {"c1": _c1, "c3": _c3, "H1": _h1, "uc1": _uc1, "F0c3": _f0c3}


def _cond_derivs(fn, z, k, dk):
    """Value, gradient in z and derivative in lambda of a scalar condition."""
    val = float(np.real(fn(z, k)))
    grad = np.empty(6)
    for i in range(6):
        zc = z.astype(complex)
        zc[i] += 1j * CSTEP
        grad[i] = np.imag(fn(zc, k)) / CSTEP
    dlam = float(np.imag(fn(z.astype(complex), k + 1j * CSTEP * dk)) / CSTEP) if dk is not None else 0.0
    return val, grad, dlam


# ---------------------------------------------------------------------------
# structures

@dataclass(frozen=True)
class Arc:
    hid: HId
    t_start: Optional[str]          # None means t = 0
    t_end: str
    jump: Optional[tuple[str, int]] = None   # (nu slice name, costate component 0..2)


@dataclass(frozen=True)
class Structure:
    id: str
    arcs: tuple[Arc, ...]
    node_conditions: tuple[tuple[str, ...], ...]   # for nodes z1..zm
    scalars: tuple[str, ...]                       # after p0, in layout order

    @property
    def n_nodes(self) -> int:
        return len(self.arcs) - 1

    @property
    def label(self) -> str:
        return "".join(a.hid.label for a in self.arcs)

    @property
    def slices(self) -> dict[str, slice]:
        out = {"p0": slice(0, 3)}
        pos = 3
        for name in self.scalars:
            out[name] = slice(pos, pos + 1)
            pos += 1
        for i in range(1, self.n_nodes + 1):
            out[f"z{i}"] = slice(pos, pos + 6)
            pos += 6
        return out

    @property
    def dim(self) -> int:
        return 3 + len(self.scalars) + 6 * self.n_nodes

    @property
    def times(self) -> tuple[str, ...]:
        return tuple(a.t_end for a in self.arcs)

    @property
    def jumps(self) -> tuple[str, ...]:
        return tuple(a.jump[0] for a in self.arcs if a.jump)

    def get(self, y, name):
        v = np.asarray(y)[self.slices[name]]
        return float(v[0]) if v.size == 1 else v.copy()

    def pack(self, values: dict) -> np.ndarray:
        y = np.zeros(self.dim)
        for name, sl in self.slices.items():
            y[sl] = values[name]
        return y

    def unpack(self, y) -> dict:
        return {name: self.get(y, name) for name in self.slices}


P, M, C1, C3 = HId.HPlus, HId.HMinus, HId.HC1, HId.HC3

STRUCTURES: dict[str, Structure] = {
    "S1": Structure("S1", (Arc(P, None, "tf"),), (), ("tf",)),
    "S2": Structure(
        "S2",
        (Arc(P, None, "t1"), Arc(C1, "t1", "t2"), Arc(P, "t2", "tf", ("nu2", 0))),
        (("c1", "H1"), ("uc1",)),
        ("tf", "t1", "t2", "nu2"),
    ),
    "S3": Structure(
        "S3",
        (Arc(P, None, "t1"), Arc(C1, "t1", "t2"), Arc(P, "t2", "t3", ("nu2", 0)),
         Arc(M, "t3", "t4"), Arc(P, "t4", "t5"), Arc(P, "t5", "tf", ("nu5", 2))),
        (("c1", "H1"), ("uc1",), ("H1",), ("H1",), ("c3", "F0c3")),
        ("tf", "t1", "t2", "nu2", "t3", "t4", "t5", "nu5"),
    ),
    "S4": Structure(
        "S4",
        (Arc(P, None, "t1"), Arc(C1, "t1", "t2"), Arc(P, "t2", "t3", ("nu2", 0)),
         Arc(M, "t3", "t4"), Arc(C3, "t4", "tf", ("nu4", 2))),
        (("c1", "H1"), ("uc1",), ("H1",), ("c3", "F0c3")),
        ("tf", "t1", "t2", "nu2", "t3", "t4", "nu4"),
    ),
    "S5": Structure(
        "S5",
        (Arc(P, None, "t1"), Arc(C1, "t1", "t2"), Arc(M, "t2", "t3"), Arc(C3, "t3", "tf", ("nu3", 2))),
        (("c1", "H1"), (), ("c3", "F0c3")),
        ("tf", "t1", "t2", "t3", "nu3"),
    ),
}


def get_structure(name: str | Structure) -> Structure:
    if isinstance(name, Structure):
        return name
    try:
        return STRUCTURES[name.upper()]
    except KeyError:
        raise ValueError(f"unknown structure {name!r}; expected one of {sorted(STRUCTURES)}") from None


# ---------------------------------------------------------------------------
# evaluation

def _arc_start(st: Structure, y, j: int) -> np.ndarray:
    arc = st.arcs[j]
    if j == 0:
        z = np.zeros(6)
        z[3:] = st.get(y, "p0")
    else:
        z = st.get(y, f"z{j}")
    if arc.jump:
        z[3 + arc.jump[1]] -= st.get(y, arc.jump[0])
    return z


def _arc_span(st: Structure, y, j: int) -> tuple[float, float]:
    arc = st.arcs[j]
    t0 = 0.0 if arc.t_start is None else st.get(y, arc.t_start)
    return t0, st.get(y, arc.t_end)


def residual_layout(st: Structure) -> list[str]:
    """Human-readable name of each residual component."""
    names = []
    for i in range(1, st.n_nodes + 1):
        names += [f"match{i}.{c}" for c in ("x1", "x2", "x3", "p1", "p2", "p3")]
        names += [f"z{i}.{c}" for c in st.node_conditions[i - 1]]
    return names + ["x2-1", "p1", "p3", "H-1"]


def _evaluate(mc: ModelConstants, st: Structure, y, jac: bool, lam: Optional[str]):
    y = np.asarray(y, dtype=float)
    if y.shape != (st.dim,):
        raise ValueError(f"{st.id} expects {st.dim} unknowns, got {y.shape}")
    sl = st.slices
    dk = mc.dk(lam) if lam else None
    n = st.dim
    F = np.zeros(n)
    J = np.zeros((n, n)) if jac else None
    Jl = np.zeros(n) if (jac and lam) else None
    row = 0
    for j, arc in enumerate(st.arcs):
        z_start = _arc_start(st, y, j)
        t0, t1 = _arc_span(st, y, j)
        res = expmap(mc, arc.hid, z_start, t0, t1, stm=jac, lam=lam if jac else None, arc=j)
        z_end = res.zT
        last = j == len(st.arcs) - 1
        if not last:
            node = f"z{j + 1}"
            F[row:row + 6] = z_end - st.get(y, node)
            rows = slice(row, row + 6)
            D = np.eye(6)               # d residual / d z_end
            nrow = 6
        else:
            h_end = K.ham_value(int(arc.hid), z_end, mc.k)
            F[row:row + 4] = (z_end[1] - 1.0, z_end[3], z_end[5], h_end - 1.0)
            rows = slice(row, row + 4)
            nrow = 4
            if jac:
                f = K.rhs_array(int(arc.hid), z_end, mc.k)
                D = np.zeros((4, 6))
                D[0, 1] = D[1, 3] = D[2, 5] = 1.0
                D[3, :3] = -f[3:]
                D[3, 3:] = f[:3]
        if jac:
            f = K.rhs_array(int(arc.hid), z_end, mc.k)
            Phi = res.stm
            DPhi = D @ Phi
            if j == 0:
                J[rows, sl["p0"]] += DPhi[:, 3:]
            else:
                J[rows, sl[f"z{j}"]] += DPhi
            if arc.jump:
                J[rows, sl[arc.jump[0]]] += -DPhi[:, 3 + arc.jump[1]][:, None]
            J[rows, sl[arc.t_end]] += (D @ f)[:, None]
            if arc.t_start is not None:
                J[rows, sl[arc.t_start]] += -(D @ f)[:, None]
            if not last:
                J[rows, sl[f"z{j + 1}"]] += -np.eye(6)
            if lam:
                Jl[rows] += D @ res.dlam
                if last:
                    Jl[row + 3] += np.imag(K.ham_value(int(arc.hid), z_end.astype(complex),
                                                       mc.k + 1j * CSTEP * dk)) / CSTEP
        row += nrow
        if not last:
            node = f"z{j + 1}"
            zi = st.get(y, node)
            for cname in st.node_conditions[j]:
                val, grad, dl = _cond_derivs(CONDITIONS[cname], zi, mc.k, dk)
                F[row] = val
                if jac:
                    J[row, sl[node]] += grad
                    if lam:
                        Jl[row] += dl
                row += 1
    return F, J, Jl


def eval_shooting(mc: ModelConstants, structure, y) -> np.ndarray:
    return _evaluate(mc, get_structure(structure), y, False, None)[0]


def jacobian(mc: ModelConstants, structure, y, lam: Optional[str] = None):
    """Jacobian of the shooting function; with ``lam`` also d residual / d lambda."""
    _, J, Jl = _evaluate(mc, get_structure(structure), y, True, lam)
    return (J, Jl) if lam else J


def eval_with_jacobian(mc, structure, y, lam=None):
    return _evaluate(mc, get_structure(structure), y, True, lam)


# ---------------------------------------------------------------------------
# Newton

@dataclass
class SolveReport:
    structure: str
    converged: bool
    residual: float
    iterations: int
    y: np.ndarray
    mc: ModelConstants
    message: str = ""
    history: list = field(default_factory=list)
    admissibility: Optional["AdmissibilityReport"] = None

    @property
    def named(self) -> dict:
        return get_structure(self.structure).unpack(self.y)

    def to_dict(self) -> dict:
        b = self.mc.bounds
        named = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.named.items()}
        out = {
            "structure": self.structure,
            "label": get_structure(self.structure).label,
            "converged": self.converged,
            "residual": self.residual,
            "iterations": self.iterations,
            "message": self.message,
            "bounds": {"imax": b.i_max, "vmax": b.v_max, "alphaf": b.alpha_f},
            "params": params_to_dict(self.mc.params),
            "unknowns": named,
            "y": self.y.tolist(),
        }
        if self.admissibility is not None:
            out["admissibility"] = self.admissibility.to_dict()
        return out

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def load_report(source) -> tuple[str, np.ndarray, ModelConstants, dict]:
    """Read a SolveReport JSON; returns (structure id, y, model constants, raw dict)."""
    if isinstance(source, dict):
        data = source
    else:
        with open(source) as fh:
            data = json.load(fh)
    try:
        st = get_structure(data["structure"])
        y = np.asarray(data["y"], dtype=float)
        b = data["bounds"]
        params = CarParams(**data["params"]) if "params" in data else CarParams()
        mc = normalize(params, Bounds(b["imax"], b["vmax"], b.get("alphaf", 100.0)))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed solve report: missing {exc}") from exc
    if y.shape != (st.dim,):
        raise ValueError(f"report y has {y.size} entries, {st.id} needs {st.dim}")
    return st.id, y, mc, data


def _safe_residual(mc, st, y):
    try:
        F = eval_shooting(mc, st, y)
    except IntegrationError:
        return None
    return F if np.all(np.isfinite(F)) else None


def solve(mc: ModelConstants, structure, y_init, tol: float = 1e-8, max_iter: int = 100,
          polish: int = 2, check: bool = True) -> SolveReport:
    """Damped Newton with backtracking on the residual norm.

    After reaching ``tol`` up to ``polish`` extra full steps are taken while
    they keep decreasing the residual.
    """
    st = get_structure(structure)
    y = np.array(y_init, dtype=float)
    F = _safe_residual(mc, st, y)
    if F is None:
        return SolveReport(st.id, False, np.inf, 0, y, mc, "integration failed at initial guess")
    norm = float(np.linalg.norm(F))
    history = [norm]
    message = "maximum iterations reached"
    extra = 0
    it = 0
    for it in range(1, max_iter + 1):
        if norm <= tol:
            if extra >= polish:
                break
            extra += 1
        try:
            _, J, _ = _evaluate(mc, st, y, True, None)
            dy = np.linalg.solve(J, -F)
        except IntegrationError as exc:
            message = str(exc)
            break
        except np.linalg.LinAlgError:
            message = "singular Jacobian"
            break
        alpha = 1.0
        accepted = False
        while alpha >= 1e-14:
            y_try = y + alpha * dy
            F_try = _safe_residual(mc, st, y_try)
            if F_try is not None:
                n_try = float(np.linalg.norm(F_try))
                if n_try < (1.0 - 1e-4 * alpha) * norm or (norm <= tol and n_try < norm):
                    accepted = True
                    break
            if norm <= tol:
                break
            alpha *= 0.5
        if not accepted:
            message = "converged" if norm <= tol else "line search failed"
            break
        y, F, norm = y_try, F_try, n_try
        history.append(norm)
    converged = norm <= tol
    if converged:
        message = "converged"
    rep = SolveReport(st.id, converged, norm, it, y, mc, message, history)
    if converged and check:
        rep.admissibility = check_admissible(mc, st, y)
    return rep


def multistart_s1(mc: ModelConstants, tol: float = 1e-8,
                  p_values=(0.1, 1.0, 5.0), tf_values=(2.0, 5.0, 10.0, 20.0),
                  max_iter: int = 60) -> tuple[Optional[SolveReport], list[SolveReport]]:
    """Solve S1 from a grid of starts; returns the best admissible zero and all reports."""
    reports = []
    for a in p_values:
        for b in p_values:
            for c in p_values:
                for tf in tf_values:
                    rep = solve(mc, "S1", [a, b, c, tf], tol=tol, max_iter=max_iter, check=False)
                    reports.append(rep)
    best = None
    for rep in reports:
        if not rep.converged or rep.y[3] <= 0:
            continue
        rep.admissibility = check_admissible(mc, "S1", rep.y)
        if rep.admissibility.admissible and (best is None or rep.y[3] < best.y[3]):
            best = rep
    return best, reports


# ---------------------------------------------------------------------------
# admissibility

@dataclass
class AdmissibilityReport:
    admissible: bool
    flags: list
    arcs: list
    empty_arcs: list

    def to_dict(self) -> dict:
        return {"admissible": self.admissible, "flags": self.flags,
                "arcs": self.arcs, "empty_arcs": self.empty_arcs}


def arc_controls(mc: ModelConstants, hid: HId, zs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Control and multiplier along sampled points of an arc of type ``hid``."""
    n = len(zs)
    if hid == HId.HPlus:
        return np.ones(n), np.zeros(n)
    if hid == HId.HMinus:
        return -np.ones(n), np.zeros(n)
    if hid == HId.HC1:
        return u_c1(mc.k, zs[:, 2]), -mc.k[4] * zs[:, 5]
    return np.full(n, u_c3(mc.k)), -mc.k[2] * zs[:, 4]


def sample_arcs(mc: ModelConstants, structure, y, n_per_arc: int = 200):
    """Dense samples of each arc: list of (arc, t, z) with t ascending."""
    st = get_structure(structure)
    out = []
    for j, arc in enumerate(st.arcs):
        t0, t1 = _arc_span(st, y, j)
        res = expmap(mc, arc.hid, _arc_start(st, y, j), t0, t1, dense=True, arc=j)
        t = np.linspace(t0, t1, n_per_arc)
        t = np.unique(np.concatenate([t, res.ts]))
        if t1 < t0:
            t = t[::-1]
        out.append((arc, t, res.sample(t)))
    return out


def trajectory_rows(mc: ModelConstants, structure, y, n_per_arc: int = 200):
    rows = []
    for arc, t, z in sample_arcs(mc, structure, y, n_per_arc):
        u, eta = arc_controls(mc, arc.hid, z)
        rows += [(t[i], z[i], u[i], eta[i], arc.hid.label) for i in range(len(t))]
    return rows


def check_admissible(mc: ModelConstants, structure, y, tol_c: float = TOL_C,
                     n_per_arc: int = 200) -> AdmissibilityReport:
    st = get_structure(structure)
    y = np.asarray(y, dtype=float)
    flags: list[str] = []
    arcs_info: list[dict] = []
    empty: list[int] = []

    times = [0.0] + [st.get(y, name) for name in st.times]
    for j in range(len(times) - 1):
        length = times[j + 1] - times[j]
        if length < -EMPTY_ARC:
            flags.append(f"time ordering: arc {j} ({st.arcs[j].hid.label}) has negative length {length:.3e}")
        elif length < EMPTY_ARC:
            empty.append(j)
    for name in st.jumps:
        nu = st.get(y, name)
        if nu > tol_c:
            flags.append(f"jump sign: {name} = {nu:.3e} > 0")

    try:
        samples = sample_arcs(mc, st, y, n_per_arc)
    except IntegrationError as exc:
        flags.append(str(exc))
        return AdmissibilityReport(False, flags, arcs_info, empty)

    for j, (arc, t, z) in enumerate(samples):
        label = arc.hid.label
        info = {"arc": j, "type": label, "t0": float(times[j]), "t1": float(times[j + 1]),
                "length": float(times[j + 1] - times[j]),
                "max_c1": float(np.max(z[:, 0] - 1.0)), "max_c3": float(np.max(z[:, 2] - 1.0))}
        if info["max_c1"] > tol_c:
            flags.append(f"c1 violated on arc {j} ({label}): {info['max_c1']:.3e}")
        if info["max_c3"] > tol_c:
            flags.append(f"c3 violated on arc {j} ({label}): {info['max_c3']:.3e}")
        phi = mc.k[6] * z[:, 3]
        if arc.hid in (HId.HPlus, HId.HMinus):
            sign = 1.0 if arc.hid == HId.HPlus else -1.0
            worst = float(np.min(sign * phi))
            info["min_signed_phi"] = worst
            if worst < -tol_c and j not in empty:
                flags.append(f"switching function sign on arc {j} ({label}): {worst:.3e}")
        else:
            u, eta = arc_controls(mc, arc.hid, z)
            info["max_abs_u"] = float(np.max(np.abs(u)))
            info["max_eta"] = float(np.max(eta))
            if info["max_abs_u"] > 1.0 + tol_c:
                flags.append(f"boundary control out of bounds on arc {j} ({label}): |u| = {info['max_abs_u']:.6f}")
            if info["max_eta"] > tol_c:
                flags.append(f"multiplier sign on arc {j} ({label}): eta = {info['max_eta']:.3e}")
        arcs_info.append(info)
    return AdmissibilityReport(not flags, flags, arcs_info, empty)


def trajectory_max(mc: ModelConstants, structure, y, comp: int) -> tuple[float, int, float]:
    """Maximum of state component ``comp`` over the trajectory.

    Returns (value, arc index, time); the sampled maximum is refined on the
    Hermite interpolant of the accepted steps.
    """
    st = get_structure(structure)
    best = (-np.inf, -1, 0.0)
    for j, arc in enumerate(st.arcs):
        t0, t1 = _arc_span(st, y, j)
        if t1 <= t0:
            continue
        res = expmap(mc, arc.hid, _arc_start(st, y, j), t0, t1, dense=True, arc=j)
        t = np.unique(np.concatenate([np.linspace(t0, t1, 64), res.ts]))
        vals = res.sample(t)[:, comp]
        i = int(np.argmax(vals))
        tb, vb = t[i], vals[i]
        if 0 < i < len(t) - 1:
            opt = minimize_scalar(lambda s: -res.sample(s)[0, comp], bounds=(t[i - 1], t[i + 1]),
                                  method="bounded", options={"xatol": 1e-13})
            if -opt.fun > vb:
                tb, vb = float(opt.x), float(-opt.fun)
        if vb > best[0]:
            best = (float(vb), j, float(tb))
    return best
