import numpy as np
import pytest

from evcar.model import Bounds, CarParams, normalize
from evcar.scenario import _milestone_solutions, run_scenario
from evcar.shooting import solve

REFERENCE_Y1 = np.array([0.3615, 6.4479, 0.2416, 5.6156])


@pytest.fixture(scope="session")
def mc1100():
    return normalize(CarParams(), Bounds(1100.0, 110.0, 100.0))


@pytest.fixture(scope="session")
def s1_solution(mc1100):
    rep = solve(mc1100, "S1", REFERENCE_Y1)
    assert rep.converged
    return rep


@pytest.fixture(scope="session")
def scenario(tmp_path_factory):
    """One full run of both legs, shared by every test that needs solved structures."""
    out = tmp_path_factory.mktemp("scenario")
    result = run_scenario(out_dir=out, figures=True)
    result["out"] = out
    return result


@pytest.fixture(scope="session")
def solved(scenario):
    """(name, model, structure id, y) for every milestone solution of the run."""
    return _milestone_solutions(scenario)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
