"""Exponential mappings of the Hamiltonian fields, with optional variational flow."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import _kernels as K
from .hamiltonians import HamiltonianId
from .model import ModelConstants

DEFAULT_TOL = 1e-10
MAX_STEPS = 200_000

_STATUS_TEXT = {
    K.MAX_STEPS: "maximum step count reached",
    K.STEP_UNDERFLOW: "step size underflow",
    K.NONFINITE: "non-finite state",
}


def default_tol() -> float:
    """Integrator tolerance; ``EVCAR_TOL`` overrides the built-in 1e-10."""
    raw = os.environ.get("EVCAR_TOL")
    if not raw:
        return DEFAULT_TOL
    try:
        tol = float(raw)
    except ValueError:
        raise ValueError(f"EVCAR_TOL must be a number, got {raw!r}") from None
    if not (0 < tol < 1):
        raise ValueError(f"EVCAR_TOL must lie in (0, 1), got {tol}")
    return tol


class IntegrationError(RuntimeError):
    def __init__(self, message: str, t_reached: float, arc: Optional[int] = None):
        self.t_reached = t_reached
        self.arc = arc
        where = f" on arc {arc}" if arc is not None else ""
        super().__init__(f"integration failed{where}: {message} at t = {t_reached:.6g}")


@dataclass
class FlowResult:
    zT: np.ndarray
    t0: float
    t1: float
    stm: Optional[np.ndarray] = None
    dlam: Optional[np.ndarray] = None
    ts: Optional[np.ndarray] = field(default=None, repr=False)
    zs: Optional[np.ndarray] = field(default=None, repr=False)
    fs: Optional[np.ndarray] = field(default=None, repr=False)
    steps: int = 0
    rejected: int = 0

    def sample(self, t) -> np.ndarray:
        """Cubic Hermite interpolation on the accepted steps."""
        if self.ts is None:
            raise ValueError("flow was computed without dense output")
        t = np.atleast_1d(np.asarray(t, dtype=float))
        ts, zs, fs = self.ts, self.zs, self.fs
        if len(ts) == 1:
            return np.repeat(zs[:1], len(t), axis=0)
        forward = ts[-1] >= ts[0]
        key = ts if forward else ts[::-1]
        idx = np.searchsorted(key, t) - 1
        idx = np.clip(idx, 0, len(ts) - 2)
        if not forward:
            idx = len(ts) - 2 - idx
        ta, tb = ts[idx], ts[idx + 1]
        h = (tb - ta)[:, None]
        s = ((t - ta) / (tb - ta))[:, None]
        za, zb, fa, fb = zs[idx], zs[idx + 1], fs[idx], fs[idx + 1]
        h00 = 2 * s ** 3 - 3 * s ** 2 + 1
        h10 = s ** 3 - 2 * s ** 2 + s
        h01 = -2 * s ** 3 + 3 * s ** 2
        h11 = s ** 3 - s ** 2
        return h00 * za + h10 * h * fa + h01 * zb + h11 * h * fb

    def grid(self, n: int = 200) -> tuple[np.ndarray, np.ndarray]:
        t = np.linspace(self.t0, self.t1, n)
        return t, self.sample(t)


def _run(mc, hid, y0, t0, t1, tol, with_var, lam, record, arc=None):
    tol = default_tol() if tol is None else tol
    dk = mc.dk(lam) if lam else np.zeros(7)
    y, t, status, nacc, nrej, ts, zs, fs, nrec = K.dopri5(
        int(hid), y0, float(t0), float(t1), mc.k, dk, tol, tol,
        with_var, lam is not None, record, MAX_STEPS)
    if status != K.OK:
        raise IntegrationError(_STATUS_TEXT[status], t, arc)
    return y, nacc, nrej, (ts[:nrec], zs[:nrec], fs[:nrec]) if record else (None, None, None)


def expmap(mc: ModelConstants, hid: HamiltonianId, z0, t0: float, t1: float,
           tol: float | None = None, dense: bool = False, stm: bool = False,
           lam: str | None = None, arc: int | None = None) -> FlowResult:
    """Flow ``z0`` from ``t0`` to ``t1`` along the field of ``hid``.

    With ``stm=True`` the 6x6 state-transition matrix is propagated alongside;
    ``lam`` ("imax" or "vmax") additionally propagates dz/dlambda from zero.
    """
    z0 = np.asarray(z0, dtype=float)
    y0 = np.zeros(K.NAUG)
    y0[:6] = z0
    if stm:
        y0[6:42] = np.eye(6).ravel()
    y, nacc, nrej, (ts, zs, fs) = _run(mc, hid, y0, t0, t1, tol, stm, lam if stm else None, dense, arc)
    return FlowResult(
        zT=y[:6].copy(), t0=float(t0), t1=float(t1),
        stm=y[6:42].reshape(6, 6).copy() if stm else None,
        dlam=y[42:48].copy() if (stm and lam) else None,
        ts=ts, zs=zs, fs=fs, steps=nacc, rejected=nrej,
    )


def expmap_var(mc: ModelConstants, hid: HamiltonianId, z0, dz0, t0: float, t1: float,
               tol: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Flow ``z0`` together with a tangent vector ``dz0``."""
    res = expmap(mc, hid, z0, t0, t1, tol=tol, stm=True)
    return res.zT, res.stm @ np.asarray(dz0, dtype=float)


TRAJECTORY_COLUMNS = ("t", "x1", "x2", "x3", "p1", "p2", "p3", "u", "eta", "arc")


def write_trajectory_csv(path: str | Path, rows: Iterable[tuple]) -> None:
    """Write rows ``(t, z[6], u, eta, arc)`` to a CSV file."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for t, z, u, eta, arc in rows:
            w.writerow([f"{t:.12g}", *(f"{v:.12g}" for v in z), f"{u:.12g}", f"{eta:.12g}", arc])
