"""Electric car model: physical parameters, normalized dynamics and constraints.

The state is normalized by the bounds, ``x = (i / i_max, alpha / alpha_f,
omega / omega_max)``, and the dynamics becomes ``x' = F0(x) + u F1(x)`` with
coefficients ``k1..k7`` built from the 12-vector ``w``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields as dc_fields
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from scipy.optimize import brentq

PARAM_KEYS = ("Lm", "Rm", "Km", "Valim", "r", "Kr", "g", "Kf", "M", "rho", "S", "Cx", "Rbat")
BOUND_KEYS = ("imax", "vmax", "alphaf")

# Exponents of (i_max, omega_max) in each k_j; used for d k / d lambda.
_IMAX_EXP = np.array([0, -1, 0, 0, 1, 0, -1], dtype=float)
_OMEGA_EXP = np.array([0, 1, 1, -1, -1, 1, 0], dtype=float)


class ConfigError(ValueError):
    """Invalid or incomplete model configuration."""


@dataclass(frozen=True)
class CarParams:
    Lm: float = 0.05
    Rm: float = 0.03
    Km: float = 0.27
    Valim: float = 150.0
    r: float = 0.33
    Kr: float = 10.0
    g: float = 9.81
    Kf: float = 0.03
    M: float = 250.0
    rho: float = 1.293
    S: float = 2.0
    Cx: float = 0.4
    Rbat: float = 0.05

    def __post_init__(self):
        for f in dc_fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or v <= 0:
                raise ConfigError(f"car parameter {f.name!r} must be > 0, got {v!r}")


@dataclass(frozen=True)
class Bounds:
    """Constraint bounds; v_max in km/h, omega_max derived from it."""

    i_max: float
    v_max: float
    alpha_f: float = 100.0

    def __post_init__(self):
        for name in ("i_max", "v_max", "alpha_f"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise ConfigError(f"bound {name!r} must be > 0, got {v!r}")

    def omega_max(self, params: CarParams) -> float:
        return vmax_to_omega(params, self.v_max)


def vmax_to_omega(params: CarParams, v_max):
    return v_max * params.Kr / (3.6 * params.r)


def omega_to_vmax(params: CarParams, omega):
    return omega * 3.6 * params.r / params.Kr


def parameter_vector(params: CarParams, i_max, alpha_f, omega_max) -> np.ndarray:
    p = params
    dtype = np.result_type(i_max, omega_max, float)
    return np.array([
        1.0 / p.Lm, p.Rm, p.Km, p.Valim, p.r / p.Kr, p.g * p.Kf, 1.0 / p.M,
        0.5 * p.rho * p.S * p.Cx, p.Rbat, i_max, alpha_f, omega_max,
    ], dtype=dtype)


def kappa(w: np.ndarray) -> np.ndarray:
    """k1..k7 from the parameter vector (works on complex input)."""
    w1, w2, w3, w4, w5, w6, w7, w8, _, w10, w11, w12 = w
    return np.array([
        -w1 * w2,
        -w1 * w3 * w12 / w10,
        w5 * w12 / w11,
        -w6 / (w5 * w12),
        w3 * w7 * w10 / (w5 ** 2 * w12),
        -w5 * w7 * w8 * w12,
        w1 * w4 / w10,
    ])


@dataclass(frozen=True)
class ModelConstants:
    params: CarParams
    bounds: Bounds
    w: np.ndarray = field(repr=False)
    k: np.ndarray

    @property
    def k1(self): return float(self.k[0])
    @property
    def k2(self): return float(self.k[1])
    @property
    def k3(self): return float(self.k[2])
    @property
    def k4(self): return float(self.k[3])
    @property
    def k5(self): return float(self.k[4])
    @property
    def k6(self): return float(self.k[5])
    @property
    def k7(self): return float(self.k[6])

    @property
    def omega_max(self) -> float:
        return float(self.w[11])

    @property
    def c1_increasing(self) -> bool:
        """True when k4 + k5 + k6 > 0, which makes u_c1 increase along a c1 arc."""
        return self.k4 + self.k5 + self.k6 > 0

    def dk(self, lam: str) -> np.ndarray:
        """Derivative of k1..k7 with respect to ``imax`` or ``vmax``."""
        if lam == "imax":
            return self.k * _IMAX_EXP / self.bounds.i_max
        if lam == "vmax":
            return self.k * _OMEGA_EXP / self.bounds.v_max
        raise ValueError(f"unknown homotopy parameter {lam!r}")

    def lam(self, name: str) -> float:
        return {"imax": self.bounds.i_max, "vmax": self.bounds.v_max}[name]

    def at(self, **changes) -> "ModelConstants":
        """Rebuild with some of ``imax``, ``vmax``, ``alphaf`` replaced."""
        b = self.bounds
        return normalize(self.params, Bounds(
            i_max=changes.get("imax", b.i_max),
            v_max=changes.get("vmax", b.v_max),
            alpha_f=changes.get("alphaf", b.alpha_f),
        ))

    def with_lam(self, name: str, value: float) -> "ModelConstants":
        return self.at(**{name: value})


def normalize(params: CarParams, bounds: Bounds) -> ModelConstants:
    omega = bounds.omega_max(params)
    w = parameter_vector(params, bounds.i_max, bounds.alpha_f, omega)
    k = kappa(w)
    signs = np.sign(k)
    if not np.array_equal(signs, [-1, -1, 1, -1, 1, -1, 1]):
        raise ConfigError(f"unexpected sign pattern of k1..k7: {k}")
    return ModelConstants(params=params, bounds=bounds, w=w, k=k)


def fields(mc: ModelConstants, x) -> dict[str, np.ndarray]:
    """F0, F1 and the nonzero Lie brackets F01, F001, F10001 at ``x``."""
    k1, k2, k3, k4, k5, k6, k7 = mc.k
    x1, _, x3 = x
    return {
        "F0": np.array([k1 * x1 + k2 * x3, k3 * x3, k4 + k5 * x1 + k6 * x3 ** 2]),
        "F1": np.array([k7, 0.0, 0.0]),
        "F01": -k7 * np.array([k1, 0.0, k5]),
        "F001": k7 * np.array([k1 ** 2 + k2 * k5, k3 * k5, k5 * (k1 + 2 * k6 * x3)]),
        "F10001": np.array([0.0, 0.0, 2 * k5 ** 2 * k6 * k7 ** 2]),
    }


def constraints(mc: ModelConstants, x) -> dict[str, float]:
    k = mc.k
    return {
        "c1": x[0] - 1.0,
        "c3": x[2] - 1.0,
        "F0c3": k[3] + k[4] * x[0] + k[5] * x[2] ** 2,
    }


def u_c1(k, x3):
    return -(k[0] + k[1] * x3) / k[6]


def u_c3(k):
    return -(-k[0] * (k[3] + k[5]) / k[4] + k[1]) / k[6]


def x1_on_c3(k):
    return -(k[3] + k[5]) / k[4]


def boundary_controls(mc: ModelConstants, x) -> dict[str, float]:
    return {
        "u_c1": float(u_c1(mc.k, x[2])),
        "u_c3": float(u_c3(mc.k)),
        "x1_on_c3": float(x1_on_c3(mc.k)),
    }


def vmax_gamma_c3(params: CarParams, i_max: float, alpha_f: float = 100.0,
                  bracket: tuple[float, float] = (1.0, 1e4)) -> float:
    """v_max (km/h) at which the c3 boundary control equals 1."""

    def g(omega):
        w = parameter_vector(params, i_max, alpha_f, omega)
        return u_c3(kappa(w)) - 1.0

    a, b = bracket
    ga, gb = g(a), g(b)
    if not np.sign(ga) * np.sign(gb) < 0:
        raise ValueError("no admissible-boundary threshold: u_c3 - 1 does not change "
                         f"sign on omega_max in [{a}, {b}]")
    omega = brentq(g, a, b, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    if abs(g(omega)) > 1e-10:
        raise ValueError(f"threshold root not accurate: residual {g(omega):.3e}")
    return float(omega_to_vmax(params, omega))


# ---------------------------------------------------------------------------
# configuration I/O

def load_config(source: str | Path | Mapping[str, Any] | None = None,
                require_bounds: bool = False) -> tuple[CarParams, dict[str, float]]:
    """Read car parameters and optional bounds from a JSON file or mapping.

    Missing car keys fall back to the solar car defaults only when the whole
    parameter block is absent; a partial block is an error naming the key.
    """
    if source is None:
        data: Mapping[str, Any] = {}
    elif isinstance(source, Mapping):
        data = source
    else:
        try:
            data = json.loads(Path(source).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {source}: invalid JSON ({exc})") from exc
        except OSError as exc:
            raise ConfigError(f"config {source}: {exc.strerror}") from exc
    if not isinstance(data, Mapping):
        raise ConfigError("config must be a JSON object")

    unknown = set(data) - set(PARAM_KEYS) - set(BOUND_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key {sorted(unknown)[0]!r}")
    present = [key for key in PARAM_KEYS if key in data]
    if present and len(present) != len(PARAM_KEYS):
        missing = [key for key in PARAM_KEYS if key not in data]
        raise ConfigError(f"missing car parameter {missing[0]!r}")
    values = {}
    for key in present + [b for b in BOUND_KEYS if b in data]:
        v = data[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"config key {key!r} must be a number, got {v!r}")
        if not (np.isfinite(v) and v > 0):
            raise ConfigError(f"config key {key!r} must be finite and > 0, got {v!r}")
        values[key] = float(v)
    params = CarParams(**{key: values[key] for key in present}) if present else CarParams()
    bounds = {key: values[key] for key in BOUND_KEYS if key in values}
    if require_bounds:
        for key in BOUND_KEYS:
            if key not in bounds:
                raise ConfigError(f"missing bound {key!r}")
    return params, bounds


def params_to_dict(params: CarParams) -> dict[str, float]:
    return asdict(params)
