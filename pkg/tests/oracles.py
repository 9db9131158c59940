"""Independent reference computations used to freeze expected values.

Nothing here imports the package's integrator or constants: the normalized
coefficients are rebuilt from the raw current / position / speed equations,
the bang-arc shooting problem is solved with scipy's DOP853 and fsolve, and
the boundary-control threshold comes from the closed-form root of a quadratic.
"""
from __future__ import annotations

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import fsolve, minimize_scalar

REFERENCE_CAR = dict(Lm=0.05, Rm=0.03, Km=0.27, Valim=150.0, r=0.33, Kr=10.0, g=9.81, Kf=0.03,
              M=250.0, rho=1.293, S=2.0, Cx=0.4, Rbat=0.05)

# Frozen outputs of the functions below (reference car, alpha_f = 100).
S1_ZERO_1100 = (0.3675202047606, 6.4479153160073, 0.2416859479975, 5.6156235763048)
IMAX_C1 = 1081.9358875141
VMAX_GC3_150 = 65.6041962348114


def omega_max(p: dict, v_max: float) -> float:
    return v_max * p["Kr"] / (3.6 * p["r"])


def raw_constants(p: dict, i_max: float, v_max: float, alpha_f: float) -> np.ndarray:
    """k1..k7 read off the raw dynamics after scaling i, alpha, omega by the bounds."""
    om = omega_max(p, v_max)
    Lm, Rm, Km, V = p["Lm"], p["Rm"], p["Km"], p["Valim"]
    r, Kr, M = p["r"], p["Kr"], p["M"]
    drag = 0.5 * p["rho"] * p["S"] * p["Cx"]
    return np.array([
        -Rm / Lm,                                  # x1 coefficient in x1'
        -Km * om / (Lm * i_max),                   # x3 coefficient in x1'
        r * om / (Kr * alpha_f),                   # x2' = k3 x3
        -Kr * p["g"] * p["Kf"] / (r * om),         # constant in x3'
        Kr ** 2 * Km * i_max / (r ** 2 * M * om),  # x1 coefficient in x3'
        -drag * r * om / (Kr * M),                 # x3^2 coefficient in x3'
        V / (Lm * i_max),                          # control gain in x1'
    ])


def vmax_gc3_closed_form(p: dict, i_max: float, alpha_f: float) -> float:
    """Root of u_c3(omega) = 1 written as a quadratic in omega."""
    # k2 = -a om, k4 = -b / om, k5 = c / om, k6 = -d om, k1 = -e, k7 = f
    k = raw_constants(p, i_max, 1.0, alpha_f)
    om1 = omega_max(p, 1.0)
    a, b, c, d = -k[1] / om1, -k[3] * om1, k[4] * om1, -k[5] / om1
    e, f = -k[0], k[6]
    qa, qb, qc = e * d / c, a, e * b / c - f
    om = (-qb + np.sqrt(qb * qb - 4 * qa * qc)) / (2 * qa)
    return float(om * 3.6 * p["r"] / p["Kr"])


def _hplus_rhs(k):
    k1, k2, k3, k4, k5, k6, k7 = k

    def rhs(t, z):
        x1, x2, x3, p1, p2, p3 = z
        return [k1 * x1 + k2 * x3 + k7, k3 * x3, k4 + k5 * x1 + k6 * x3 ** 2,
                -(k1 * p1 + k5 * p3), 0.0, -(k2 * p1 + k3 * p2 + 2 * k6 * x3 * p3)]
    return rhs


def bang_arc(k, p0, tf, dense=False):
    return solve_ivp(_hplus_rhs(k), (0.0, tf), [0, 0, 0, *p0], method="DOP853",
                     rtol=1e-13, atol=1e-13, dense_output=dense)


def s1_residual(k, y):
    z = bang_arc(k, y[:3], y[3]).y[:, -1]
    x1, x2, x3, p1, p2, p3 = z
    h = p1 * (k[0] * x1 + k[1] * x3 + k[6]) + p2 * k[2] * x3 + p3 * (k[3] + k[4] * x1 + k[5] * x3 ** 2)
    return [x2 - 1.0, p1, p3, h - 1.0]


def s1_zero(p: dict = REFERENCE_CAR, i_max=1100.0, v_max=110.0, alpha_f=100.0,
            guess=(0.36, 6.4, 0.24, 5.6)) -> np.ndarray:
    k = raw_constants(p, i_max, v_max, alpha_f)
    return fsolve(lambda y: s1_residual(k, y), guess, xtol=1e-13)


def max_current(p: dict = REFERENCE_CAR, i_max=1100.0, v_max=110.0, alpha_f=100.0) -> float:
    """i_max times the largest normalized current along the bang arc (amperes)."""
    k = raw_constants(p, i_max, v_max, alpha_f)
    y = s1_zero(p, i_max, v_max, alpha_f)
    sol = bang_arc(k, y[:3], y[3], dense=True)
    t = np.linspace(0, y[3], 4001)
    i = int(np.argmax(sol.sol(t)[0]))
    opt = minimize_scalar(lambda s: -sol.sol(s)[0], bounds=(t[i - 1], t[i + 1]), method="bounded",
                          options={"xatol": 1e-12})
    return float(-opt.fun * i_max)


if __name__ == "__main__":
    np.set_printoptions(precision=13)
    print("S1 zero at 1100:", s1_zero())
    print("i_max^c1:", max_current())
    print("v_max^gc3 at 150:", vmax_gc3_closed_form(REFERENCE_CAR, 150.0, 100.0))
