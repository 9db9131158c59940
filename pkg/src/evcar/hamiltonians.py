"""Hamiltonian lifts and the four true Hamiltonians with their canonical fields.

A phase point is ``z = (x1, x2, x3, p1, p2, p3)``.  Brackets follow the
convention ``[F0, F1] = dF1.F0 - dF0.F1`` so that ``H01 = {H0, H1}`` and the
switching function derivatives are ``d/dt H1 = H01``, ``d/dt H01 = H001``
along any bang arc.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from . import _kernels as K
from .model import ModelConstants


class HamiltonianId(IntEnum):
    HPlus = K.HPLUS
    HMinus = K.HMINUS
    HC1 = K.HC1
    HC3 = K.HC3

    @property
    def label(self) -> str:
        return {0: "g+", 1: "g-", 2: "gc1", 3: "gc3"}[int(self)]

    @classmethod
    def parse(cls, name: str) -> "HamiltonianId":
        lookup = {"+": cls.HPlus, "-": cls.HMinus, "c1": cls.HC1, "c3": cls.HC3,
                  "g+": cls.HPlus, "g-": cls.HMinus, "gc1": cls.HC1, "gc3": cls.HC3}
        if name in lookup:
            return lookup[name]
        try:
            return cls[name]
        except KeyError:
            raise ValueError(f"unknown Hamiltonian {name!r}; expected one of {sorted(lookup)}") from None


@dataclass(frozen=True)
class LiftValues:
    H0: float
    H1: float
    H01: float
    H001: float


def lifts(mc: ModelConstants, z) -> LiftValues:
    k1, k2, k3, k4, k5, k6, k7 = mc.k
    x1, _, x3, p1, p2, p3 = z
    H0 = p1 * (k1 * x1 + k2 * x3) + p2 * k3 * x3 + p3 * (k4 + k5 * x1 + k6 * x3 ** 2)
    H1 = k7 * p1
    H01 = -k7 * (k1 * p1 + k5 * p3)
    H001 = k7 * ((k1 ** 2 + k2 * k5) * p1 + k3 * k5 * p2 + k5 * (k1 + 2 * k6 * x3) * p3)
    return LiftValues(float(H0), float(H1), float(H01), float(H001))


def multipliers(mc: ModelConstants, z) -> dict[str, float]:
    return {"eta_c1": float(-mc.k[4] * z[5]), "eta_c3": float(-mc.k[2] * z[4])}


def hamiltonian(mc: ModelConstants, hid: HamiltonianId, z) -> float:
    return float(K.ham_value(int(hid), np.asarray(z, dtype=float), mc.k))


def ham_field(mc: ModelConstants, hid: HamiltonianId, z) -> tuple[float, np.ndarray, np.ndarray]:
    """Value, canonical vector field and its Jacobian at ``z``."""
    z = np.asarray(z, dtype=float)
    h = int(hid)
    return float(K.ham_value(h, z, mc.k)), K.rhs_array(h, z, mc.k), K.jac_array(h, z, mc.k)


def field_dlam(mc: ModelConstants, hid: HamiltonianId, z, lam: str) -> np.ndarray:
    """Derivative of the canonical field with respect to ``imax`` or ``vmax``."""
    return K.dlam_array(int(hid), np.asarray(z, dtype=float), mc.k, mc.dk(lam))
