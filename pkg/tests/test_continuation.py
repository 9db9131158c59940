import csv
import json

import numpy as np
import pytest

from evcar.continuation import (
    ContinuationError, FunctionHomotopy, HOMOTOPIES, Monitor, follow, get_homotopy, mp_correct,
    null_tangent, tangent, write_events_json, write_path_csv,
)
from evcar.shooting import get_structure

LINEAR = FunctionHomotopy("linear", lambda y, lam: y - lam,
                          lambda y, lam: (np.eye(1), -np.ones(1)))
SQUARE = FunctionHomotopy("square", lambda y, lam: y ** 2 - lam,
                          lambda y, lam: (np.diag(2 * y), -np.ones(1)))


def test_tangent_of_linear_toy():
    t = tangent(LINEAR, None, np.array([0.3]), 0.3, direction=1.0)
    np.testing.assert_allclose(t, np.array([1.0, 1.0]) / np.sqrt(2), atol=1e-14)


def test_tangent_of_square_toy():
    t = tangent(SQUARE, None, np.array([1.0]), 1.0, direction=1.0)
    np.testing.assert_allclose(t, np.array([1.0, 2.0]) / np.sqrt(5), atol=1e-14)
    # orientation memory beats the start hint
    t2 = null_tangent(np.array([[2.0, -1.0]]), prev=-t)
    np.testing.assert_allclose(t2, -t, atol=1e-14)


def test_rank_deficiency_is_reported():
    with pytest.raises(ContinuationError, match="singular point"):
        null_tangent(np.zeros((1, 2)))


def test_follow_square_toy_to_four():
    res = follow(SQUARE, None, np.array([1.0]), 1.0, 4.0, check=False)
    assert res.end.lam == 4.0
    assert res.end.y[0] == pytest.approx(2.0, abs=1e-6)
    assert res.corrected_residual <= 1e-8
    for a, b in zip(res.points, res.points[1:]):
        assert np.dot(a.tangent, b.tangent) > 0
        assert np.linalg.norm(b.tangent) == pytest.approx(1.0)
    assert res.max_drift <= 1e-4


def test_follow_stops_at_monitor_event():
    mon = Monitor("y=1.5", lambda mc, y: y[0] - 1.5)
    res = follow(SQUARE, None, np.array([1.0]), 1.0, 4.0, monitors=[mon], check=False)
    assert res.event is not None and res.event.kind == "y=1.5"
    assert res.event.lam == pytest.approx(2.25, abs=1e-8)
    lo, hi = sorted(res.event.bracket)
    assert lo - 1e-12 <= res.event.lam <= hi + 1e-12


def test_follow_rejects_bad_start():
    with pytest.raises(ContinuationError, match="start point residual"):
        follow(SQUARE, None, np.array([1.1]), 1.0, 4.0, check=False)


def test_moore_penrose_correction_crosses_fold():
    # Newton at fixed lam = -0.05 has no zero to find; letting lam move does
    y, lam, res = mp_correct(SQUARE, None, np.array([0.1]), -0.05)
    assert res <= 1e-10
    assert y[0] ** 2 == pytest.approx(lam, abs=1e-10)


def test_homotopy_table():
    assert {h: (HOMOTOPIES[h].structure, HOMOTOPIES[h].lam) for h in HOMOTOPIES} == {
        "h1": ("S1", "imax"), "h2a": ("S2", "imax"), "h2b": ("S2", "vmax"),
        "h3": ("S3", "vmax"), "h4": ("S4", "vmax"), "h5": ("S5", "vmax")}
    with pytest.raises(ValueError, match="unknown homotopy"):
        get_homotopy("h9")


def test_tangent_at_h1_start(mc1100, s1_solution):
    t = tangent("h1", mc1100, s1_solution.y, 1100.0, scale=950.0)
    assert t[-1] < 0 and np.linalg.norm(t) == pytest.approx(1.0)


def _leg(scenario, name):
    return next(l for l in scenario["legs"] if l.name == name)


def _series(leg, *names):
    st = get_structure(get_homotopy(leg.name).structure)
    lam = np.array([p.lam for p in leg.path.points])
    return lam, [np.array([st.get(p.y, n) for p in leg.path.points]) for n in names]


def test_h2a_boundary_arc_grows(scenario):
    leg = _leg(scenario, "h2a")
    lam, (t1, t2, nu2) = _series(leg, "t1", "t2", "nu2")
    assert np.all(np.diff(lam) < 0)
    assert np.all(np.diff(t2 - t1) > 0)
    assert np.all(nu2 <= 1e-6) and nu2[0] < -1e-3
    assert leg.path.end.lam == 150.0


def test_h2b_junctions_constant(scenario):
    lam, (t1, t2, nu2, tf) = _series(_leg(scenario, "h2b"), "t1", "t2", "nu2", "tf")
    for v in (t1, t2, nu2):
        assert np.ptp(v) <= 1e-6
    assert np.all(np.diff(tf) >= -1e-6)        # tf grows as v_max decreases


def test_h3_boundary_arc_length_constant(scenario):
    lam, (t1, t2) = _series(_leg(scenario, "h3"), "t1", "t2")
    assert np.ptp(t2 - t1) <= 1e-6


def test_h4_stops_where_middle_arc_vanishes(scenario):
    leg = _leg(scenario, "h4")
    ev = leg.event
    st = get_structure("S4")
    assert ev.lam == pytest.approx(64.1641, abs=0.1)
    assert abs(st.get(ev.y, "nu2")) <= 1e-6
    assert abs(st.get(ev.y, "t3") - st.get(ev.y, "t2")) <= 1e-6


def test_h5_negative_arc_small_but_not_constant(scenario):
    lam, (t2, t3) = _series(_leg(scenario, "h5"), "t2", "t3")
    gap = t3 - t2
    assert np.all(gap > 0) and gap.max() < 0.1
    assert np.ptp(gap) > 1e-3


def test_final_time_monotone_on_every_leg(scenario):
    for leg in scenario["legs"]:
        lam, (tf,) = _series(leg, "tf")
        order = np.argsort(lam)
        assert np.all(np.diff(tf[order]) <= 1e-6), leg.name


def test_path_health(scenario):
    for leg in scenario["legs"]:
        pts = leg.path.points
        assert all(p.residual <= 1e-4 for p in pts), leg.name
        assert all(np.dot(a.tangent, b.tangent) > 0 for a, b in zip(pts, pts[1:])), leg.name
        assert leg.path.corrected_residual <= 1e-8, leg.name


def test_path_csv_and_events(tmp_path, scenario):
    leg = _leg(scenario, "h2b")
    path = tmp_path / "p.csv"
    write_path_csv(path, leg.path)
    rows = list(csv.reader(open(path)))
    assert rows[0][:7] == ["s", "lambda", "p0_0", "p0_1", "p0_2", "tf", "t1"]
    assert rows[0][-2:] == ["residual", "admissible"]
    assert len(rows) == len(leg.path.points) + 2
    ev = tmp_path / "events.json"
    write_events_json(ev, [leg.event], append=False)
    write_events_json(ev, [leg.event])
    data = json.loads(ev.read_text())
    assert len(data) == 2 and data[0]["kind"] == "max_c3"
    assert set(data[0]) >= {"kind", "lambda", "y"}
