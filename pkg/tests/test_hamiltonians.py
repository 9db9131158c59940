import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evcar.flow import expmap
from evcar.hamiltonians import (
    HamiltonianId as H, field_dlam, ham_field, hamiltonian, lifts, multipliers,
)
from evcar.model import fields, u_c1, u_c3
from evcar.shooting import get_structure, sample_arcs

ALL = list(H)


def _fd_jac(fn, z, h=1e-6):
    cols = []
    for i in range(6):
        e = np.zeros(6)
        e[i] = h
        cols.append((fn(z + e) - fn(z - e)) / (2 * h))
    return np.column_stack(cols)


@pytest.mark.parametrize("hid", ALL)
def test_jacobian_matches_finite_differences(mc1100, rng, hid):
    for z in rng.uniform(-2, 2, size=(100, 6)):
        _, _, J = ham_field(mc1100, hid, z)
        ref = _fd_jac(lambda v: ham_field(mc1100, hid, v)[1], z)
        assert np.linalg.norm(J - ref) <= 1e-5 * max(np.linalg.norm(ref), 1.0)


@pytest.mark.parametrize("hid", ALL)
def test_field_is_canonical(mc1100, rng, hid):
    # dz = (dH/dp, -dH/dx) with H differentiated by central differences
    for z in rng.uniform(-2, 2, size=(20, 6)):
        g = _fd_jac(lambda v: np.atleast_1d(hamiltonian(mc1100, hid, v)), z)[0]
        _, dz, _ = ham_field(mc1100, hid, z)
        np.testing.assert_allclose(dz, np.concatenate([g[3:], -g[:3]]), atol=1e-7)


def test_hplus_field_explicit(mc1100, rng):
    z = rng.uniform(-1, 1, 6)
    f = fields(mc1100, z[:3])
    _, dz, _ = ham_field(mc1100, H.HPlus, z)
    np.testing.assert_allclose(dz[:3], f["F0"] + f["F1"], rtol=1e-14)
    k1, k2, k3, k4, k5, k6, k7 = mc1100.k
    DF0 = np.array([[k1, 0, k2], [0, 0, k3], [k5, 0, 2 * k6 * z[2]]])
    np.testing.assert_allclose(dz[3:], -z[3:] @ DF0, rtol=1e-14, atol=1e-15)


@pytest.mark.parametrize("hid", ALL)
def test_p2_is_first_integral(mc1100, rng, hid):
    for z in rng.uniform(-2, 2, size=(10, 6)):
        assert ham_field(mc1100, hid, z)[1][4] == 0.0


def test_hc3_uses_constant_boundary_control(mc1100, rng):
    z = rng.uniform(-1, 1, 6)
    f = fields(mc1100, z[:3])
    _, dz, _ = ham_field(mc1100, H.HC3, z)
    # the multiplier term eta_c3 * c3 = -k3 p2 (x3 - 1) feeds x2'
    extra = np.array([0.0, -mc1100.k3 * (z[2] - 1.0), 0.0])
    np.testing.assert_allclose(dz[:3], f["F0"] + float(u_c3(mc1100.k)) * f["F1"] + extra, rtol=1e-13)
    z[2] = 1.0
    _, dz, _ = ham_field(mc1100, H.HC3, z)
    f = fields(mc1100, z[:3])
    np.testing.assert_allclose(dz[:3], f["F0"] + float(u_c3(mc1100.k)) * f["F1"], rtol=1e-13)


def test_hc1_uses_feedback_boundary_control(mc1100, rng):
    z = rng.uniform(-1, 1, 6)
    f = fields(mc1100, z[:3])
    _, dz, _ = ham_field(mc1100, H.HC1, z)
    # the multiplier term eta_c1 * c1 = -k5 p3 (x1 - 1) feeds x3'
    extra = np.array([0.0, 0.0, -mc1100.k5 * (z[0] - 1.0)])
    np.testing.assert_allclose(dz[:3], f["F0"] + float(u_c1(mc1100.k, z[2])) * f["F1"] + extra,
                               rtol=1e-13, atol=1e-15)


def test_lift_examples(mc1100):
    k = mc1100.k
    lv = lifts(mc1100, [0.2, 0.1, 0.5, 0.0, 1.0, 0.0])
    assert lv.H1 == 0 and lv.H01 == 0
    assert lv.H001 == pytest.approx(k[6] * k[2] * k[4]) and lv.H001 > 0
    assert lifts(mc1100, [0, 0, 0, 1, 0, 0]).H1 == pytest.approx(k[6])


def test_final_level_of_bang_arc(mc1100, s1_solution):
    y = s1_solution.y
    zf = expmap(mc1100, H.HPlus, [0, 0, 0, *y[:3]], 0, y[3]).zT
    lv = lifts(mc1100, zf)
    assert lv.H0 == pytest.approx(mc1100.k3 * zf[2] * zf[4], abs=1e-9)
    assert lv.H0 == pytest.approx(1.0, abs=1e-9)


def _poisson(F, G, z, h=1e-6):
    gF = _fd_jac(lambda v: np.atleast_1d(F(v)), z, h)[0]
    gG = _fd_jac(lambda v: np.atleast_1d(G(v)), z, h)[0]
    return gF[3:] @ gG[:3] - gF[:3] @ gG[3:]


def test_lifts_are_poisson_brackets(mc1100, rng):
    H0 = lambda z: lifts(mc1100, z).H0
    H1 = lambda z: lifts(mc1100, z).H1
    H01 = lambda z: lifts(mc1100, z).H01
    H001 = lambda z: lifts(mc1100, z).H001
    for z in rng.uniform(-1, 1, size=(50, 6)):
        assert _poisson(H0, H1, z) == pytest.approx(H01(z), abs=1e-7)
        assert _poisson(H0, H01, z) == pytest.approx(H001(z), abs=1e-7)
        assert abs(_poisson(H1, H01, z)) <= 1e-10
        assert abs(_poisson(H1, H001, z)) <= 1e-10


def test_switching_function_smoothness_chain(mc1100, s1_solution):
    y = s1_solution.y
    z0 = np.array([0, 0, 0, *y[:3]])
    d = 1e-3
    weights = np.array([1, -8, 0, 8, -1]) / (12 * d)     # fourth-order central stencil
    for t in np.linspace(0.2, y[3] - 0.2, 15):
        zs = [expmap(mc1100, H.HPlus, z0, 0, t + j * d).zT for j in (-2, -1, 0, 1, 2)]
        lv = [lifts(mc1100, z) for z in zs]
        assert weights @ [v.H1 for v in lv] == pytest.approx(lv[2].H01, abs=1e-6)
        assert weights @ [v.H01 for v in lv] == pytest.approx(lv[2].H001, abs=1e-6)


def test_multiplier_examples(mc1100):
    assert multipliers(mc1100, [0, 0, 0, 1, 1, 0])["eta_c1"] == 0
    assert multipliers(mc1100, [0, 0, 0, 0, 0.5, 0])["eta_c3"] < 0


def test_multiplier_sign_on_solved_c1_arc(scenario):
    mc, y = scenario["imax"]["sol_end"]
    for arc, t, z in sample_arcs(mc, get_structure("S2"), y, 300):
        if arc.hid == H.HC1:
            eta = np.array([multipliers(mc, zi)["eta_c1"] for zi in z])
            assert np.all(eta <= 1e-6)
            assert t[-1] - t[0] > 1.0


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(ALL), st.sampled_from(["imax", "vmax"]),
       st.lists(st.floats(-2, 2), min_size=6, max_size=6))
def test_lambda_derivative_matches_finite_differences(mc1100, hid, lam, zl):
    z = np.array(zl)
    h = 1e-4 * mc1100.lam(lam)
    fp = ham_field(mc1100.with_lam(lam, mc1100.lam(lam) + h), hid, z)[1]
    fm = ham_field(mc1100.with_lam(lam, mc1100.lam(lam) - h), hid, z)[1]
    ref = (fp - fm) / (2 * h)
    np.testing.assert_allclose(field_dlam(mc1100, hid, z, lam), ref, rtol=1e-5, atol=1e-9)


def test_parse_labels():
    assert H.parse("g+") is H.HPlus and H.parse("HC3") is H.HC3
    assert [h.label for h in H] == ["g+", "g-", "gc1", "gc3"]
    with pytest.raises(ValueError):
        H.parse("gc2")
