"""Compiled kernels: Hamiltonian fields, their Jacobians, and a DOPRI5 integrator.

Every field is polynomial of degree <= 2 in z = (x1, x2, x3, p1, p2, p3), so
the Jacobians are written out by hand.  The integrator carries the phase point,
its 6x6 state-transition matrix and one parameter-sensitivity column in a
single 48-vector so all three share the same step sequence.
"""
import numpy as np
from numba import njit

HPLUS, HMINUS, HC1, HC3 = 0, 1, 2, 3

NZ = 6
NAUG = NZ + NZ * NZ + NZ

OK, MAX_STEPS, STEP_UNDERFLOW, NONFINITE = 0, 1, 2, 3

CSTEP = 1e-30


@njit(cache=True, nogil=True)
def _uc3(k):
    return -(-k[0] * (k[3] + k[5]) / k[4] + k[1]) / k[6]


@njit(cache=True, nogil=True)
def ham_value(hid, z, k):
    x1, x3, p1, p2, p3 = z[0], z[2], z[3], z[4], z[5]
    k1, k2, k3, k4, k5, k6, k7 = k[0], k[1], k[2], k[3], k[4], k[5], k[6]
    if hid == HPLUS or hid == HMINUS:
        u = 1.0 if hid == HPLUS else -1.0
        return p1 * (k1 * x1 + k2 * x3 + u * k7) + p2 * k3 * x3 + p3 * (k4 + k5 * x1 + k6 * x3 * x3)
    elif hid == HC1:
        return k1 * p1 * (x1 - 1.0) + k3 * x3 * p2 + p3 * (k4 + k5 + k6 * x3 * x3)
    else:
        return p1 * (k1 * x1 + k2 * x3 + k7 * _uc3(k)) + k3 * p2 + p3 * (k4 + k5 * x1 + k6 * x3 * x3)


@njit(cache=True, nogil=True)
def ham_rhs(hid, z, k, out):
    x1, x3, p1, p2, p3 = z[0], z[2], z[3], z[4], z[5]
    k1, k2, k3, k4, k5, k6, k7 = k[0], k[1], k[2], k[3], k[4], k[5], k[6]
    if hid == HPLUS or hid == HMINUS:
        u = 1.0 if hid == HPLUS else -1.0
        out[0] = k1 * x1 + k2 * x3 + u * k7
        out[1] = k3 * x3
        out[2] = k4 + k5 * x1 + k6 * x3 * x3
        out[3] = -(k1 * p1 + k5 * p3)
        out[4] = 0.0 * p2
        out[5] = -(k2 * p1 + k3 * p2 + 2.0 * k6 * x3 * p3)
    elif hid == HC1:
        out[0] = k1 * (x1 - 1.0)
        out[1] = k3 * x3
        out[2] = k4 + k5 + k6 * x3 * x3
        out[3] = -k1 * p1
        out[4] = 0.0 * p2
        out[5] = -(k3 * p2 + 2.0 * k6 * x3 * p3)
    else:
        out[0] = k1 * x1 + k2 * x3 + k7 * _uc3(k)
        out[1] = k3 + 0.0 * x3
        out[2] = k4 + k5 * x1 + k6 * x3 * x3
        out[3] = -(k1 * p1 + k5 * p3)
        out[4] = 0.0 * p2
        out[5] = -(k2 * p1 + 2.0 * k6 * x3 * p3)


@njit(cache=True, nogil=True)
def ham_jac(hid, z, k, J):
    x3, p3 = z[2], z[5]
    k1, k2, k3, k5, k6 = k[0], k[1], k[2], k[4], k[5]
    J[:, :] = 0.0
    if hid == HPLUS or hid == HMINUS or hid == HC3:
        J[0, 0] = k1
        J[0, 2] = k2
        if hid != HC3:
            J[1, 2] = k3
        J[2, 0] = k5
        J[2, 2] = 2.0 * k6 * x3
        J[3, 3] = -k1
        J[3, 5] = -k5
        J[5, 2] = -2.0 * k6 * p3
        J[5, 3] = -k2
        if hid != HC3:
            J[5, 4] = -k3
        J[5, 5] = -2.0 * k6 * x3
    else:
        J[0, 0] = k1
        J[1, 2] = k3
        J[2, 2] = 2.0 * k6 * x3
        J[3, 3] = -k1
        J[5, 2] = -2.0 * k6 * p3
        J[5, 4] = -k3
        J[5, 5] = -2.0 * k6 * x3


@njit(cache=True, nogil=True)
def ham_dlam(hid, z, k, dk, out):
    """Partial derivative of the field with respect to the homotopy parameter."""
    zc = np.empty(NZ, dtype=np.complex128)
    kc = np.empty(7, dtype=np.complex128)
    oc = np.empty(NZ, dtype=np.complex128)
    for i in range(NZ):
        zc[i] = z[i]
    for i in range(7):
        kc[i] = k[i] + 1j * CSTEP * dk[i]
    ham_rhs(hid, zc, kc, oc)
    for i in range(NZ):
        out[i] = oc[i].imag / CSTEP


@njit(cache=True, nogil=True)
def _aug_rhs(hid, y, k, dk, with_var, use_lam, f, J, flam, out):
    z = y[:NZ]
    ham_rhs(hid, z, k, f)
    out[:NZ] = f
    if not with_var:
        return
    ham_jac(hid, z, k, J)
    for i in range(NZ):
        for j in range(NZ):
            s = 0.0
            for m in range(NZ):
                s += J[i, m] * y[NZ + m * NZ + j]
            out[NZ + i * NZ + j] = s
    if use_lam:
        ham_dlam(hid, z, k, dk, flam)
    else:
        flam[:] = 0.0
    base = NZ + NZ * NZ
    for i in range(NZ):
        s = flam[i]
        for m in range(NZ):
            s += J[i, m] * y[base + m]
        out[base + i] = s


# Dormand-Prince 5(4) coefficients
A21 = 1.0 / 5.0
A31, A32 = 3.0 / 40.0, 9.0 / 40.0
A41, A42, A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
A51, A52, A53, A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
A61, A62, A63, A64, A65 = 9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0
A71, A73, A74, A75, A76 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
E1, E3, E4, E5, E6, E7 = (71.0 / 57600.0, -71.0 / 16695.0, 71.0 / 1920.0,
                          -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0)


@njit(cache=True, nogil=True)
def _err_norm(v, y, ynew, n, atol, rtol):
    s = 0.0
    for i in range(n):
        sk = atol + rtol * max(abs(y[i]), abs(ynew[i]))
        s += (v[i] / sk) ** 2
    return np.sqrt(s / n)


@njit(cache=True, nogil=True)
def dopri5(hid, y0, t0, t1, k, dk, atol, rtol, with_var, use_lam, record, max_steps):
    """Integrate the (augmented) Hamiltonian system from t0 to t1.

    Returns (y, t_reached, status, n_accepted, n_rejected, ts, zs, fs, n_rec).
    """
    n = NAUG if with_var else NZ
    y = y0.copy()
    f = np.empty(NZ)
    J = np.empty((NZ, NZ))
    flam = np.empty(NZ)
    k1 = np.empty(NAUG)
    k2 = np.empty(NAUG)
    k3 = np.empty(NAUG)
    k4 = np.empty(NAUG)
    k5 = np.empty(NAUG)
    k6 = np.empty(NAUG)
    k7 = np.empty(NAUG)
    ytmp = np.empty(NAUG)
    ynew = np.empty(NAUG)
    errv = np.empty(NAUG)

    cap = 64 if record else 1
    ts = np.empty(cap)
    zs = np.empty((cap, NZ))
    fs = np.empty((cap, NZ))
    nrec = 0

    t = t0
    span = t1 - t0
    if span == 0.0:
        if record:
            _aug_rhs(hid, y, k, dk, False, False, f, J, flam, k1)
            ts[0] = t0
            zs[0, :] = y[:NZ]
            fs[0, :] = k1[:NZ]
            nrec = 1
        return y, t, OK, 0, 0, ts, zs, fs, nrec
    direction = 1.0 if span > 0 else -1.0
    hmax = abs(span)

    _aug_rhs(hid, y, k, dk, with_var, use_lam, f, J, flam, k1)
    if record:
        ts[0] = t0
        zs[0, :] = y[:NZ]
        fs[0, :] = k1[:NZ]
        nrec = 1

    # initial step (Hairer & Wanner)
    d0 = 0.0
    d1 = 0.0
    for i in range(n):
        sk = atol + rtol * abs(y[i])
        d0 += (y[i] / sk) ** 2
        d1 += (k1[i] / sk) ** 2
    d0 = np.sqrt(d0 / n)
    d1 = np.sqrt(d1 / n)
    if d0 < 1e-5 or d1 < 1e-5:
        h = 1e-6
    else:
        h = 0.01 * d0 / d1
    h = min(h, hmax)
    for i in range(n):
        ytmp[i] = y[i] + direction * h * k1[i]
    _aug_rhs(hid, ytmp, k, dk, with_var, use_lam, f, J, flam, k2)
    d2 = 0.0
    for i in range(n):
        sk = atol + rtol * abs(y[i])
        d2 += ((k2[i] - k1[i]) / sk) ** 2
    d2 = np.sqrt(d2 / n) / h
    der = max(d1, d2)
    if der <= 1e-15:
        h1 = max(1e-6, h * 1e-3)
    else:
        h1 = (0.01 / der) ** 0.2
    h = min(100.0 * h, h1, hmax)

    beta = 0.04
    expo1 = 0.2 - beta * 0.75
    facold = 1e-4
    safe = 0.9
    facc1 = 5.0
    facc2 = 0.1
    naccept = 0
    nreject = 0
    last_rejected = False
    nstep = 0

    while True:
        if nstep >= max_steps:
            return y, t, MAX_STEPS, naccept, nreject, ts, zs, fs, nrec
        remaining = (t1 - t) * direction
        if remaining <= 0.0:
            break
        last = False
        if h >= remaining:
            h = remaining
            last = True
        if not last and h < 1e-14 * max(abs(t), 1.0):
            return y, t, STEP_UNDERFLOW, naccept, nreject, ts, zs, fs, nrec
        hs = direction * h
        nstep += 1

        for i in range(n):
            ytmp[i] = y[i] + hs * A21 * k1[i]
        _aug_rhs(hid, ytmp, k, dk, with_var, use_lam, f, J, flam, k2)
        for i in range(n):
            ytmp[i] = y[i] + hs * (A31 * k1[i] + A32 * k2[i])
        _aug_rhs(hid, ytmp, k, dk, with_var, use_lam, f, J, flam, k3)
        for i in range(n):
            ytmp[i] = y[i] + hs * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
        _aug_rhs(hid, ytmp, k, dk, with_var, use_lam, f, J, flam, k4)
        for i in range(n):
            ytmp[i] = y[i] + hs * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
        _aug_rhs(hid, ytmp, k, dk, with_var, use_lam, f, J, flam, k5)
        for i in range(n):
            ytmp[i] = y[i] + hs * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i])
        _aug_rhs(hid, ytmp, k, dk, with_var, use_lam, f, J, flam, k6)
        for i in range(n):
            ynew[i] = y[i] + hs * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i])
        _aug_rhs(hid, ynew, k, dk, with_var, use_lam, f, J, flam, k7)
        for i in range(n):
            errv[i] = hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])
        err = _err_norm(errv, y, ynew, n, atol, rtol)
        if not np.isfinite(err):
            return y, t, NONFINITE, naccept, nreject, ts, zs, fs, nrec

        fac11 = err ** expo1
        if err <= 1.0:
            fac = fac11 / facold ** beta
            fac = max(facc2, min(facc1, fac / safe))
            hnew = h / fac
            facold = max(err, 1e-4)
            naccept += 1
            t = t1 if last else t + hs
            for i in range(n):
                y[i] = ynew[i]
                k1[i] = k7[i]
            if record:
                if nrec == ts.shape[0]:
                    cap2 = 2 * nrec
                    ts2 = np.empty(cap2)
                    zs2 = np.empty((cap2, NZ))
                    fs2 = np.empty((cap2, NZ))
                    ts2[:nrec] = ts
                    zs2[:nrec, :] = zs
                    fs2[:nrec, :] = fs
                    ts, zs, fs = ts2, zs2, fs2
                ts[nrec] = t
                zs[nrec, :] = y[:NZ]
                fs[nrec, :] = k1[:NZ]
                nrec += 1
            if last_rejected:
                hnew = min(hnew, h)
            last_rejected = False
            h = min(hnew, hmax)
            if last:
                break
        else:
            hnew = h / min(facc1, fac11 / safe)
            nreject += 1
            last_rejected = True
            h = hnew
    return y, t, OK, naccept, nreject, ts, zs, fs, nrec


@njit(cache=True, nogil=True)
def rhs_array(hid, z, k):
    out = np.empty(NZ)
    ham_rhs(hid, z, k, out)
    return out


@njit(cache=True, nogil=True)
def jac_array(hid, z, k):
    J = np.empty((NZ, NZ))
    ham_jac(hid, z, k, J)
    return J


@njit(cache=True, nogil=True)
def dlam_array(hid, z, k, dk):
    out = np.empty(NZ)
    ham_dlam(hid, z, k, dk, out)
    return out
