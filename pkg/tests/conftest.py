import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from quadplan import centopt, gait, ik
from quadplan.model import RobotModel

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow],
                          derandomize=True)
settings.load_profile("default")

# randomized properties that must hold over at least this many cases
MANY = 1000

# filled while the session runs: test outcomes by node id, acceptance verdicts by criterion
OUTCOMES = {}
ACCEPTANCE = {}


def pytest_collection_modifyitems(items):
    # acceptance reuses the property-suite outcomes, so it runs last
    items.sort(key=lambda item: item.path.name == "test_acceptance.py")


def pytest_runtest_logreport(report):
    if report.when == "call" or report.failed:
        OUTCOMES[report.nodeid] = OUTCOMES.get(report.nodeid, True) and report.passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def model():
    return RobotModel()


@pytest.fixture(scope="session")
def standing(model):
    desc = gait.gen_standing(model, duration=2.0)
    return desc, centopt.solve(desc, model)


@pytest.fixture(scope="session")
def walk(model):
    desc = gait.gen_static_walk(model, 3, [[0.05, 0.0], [0.0, 0.05], [-0.04, -0.03]])
    traj = centopt.solve(desc, model)
    plan = ik.rollout(desc, ik.TrajectorySource(traj), model)
    return desc, traj, plan


@pytest.fixture(scope="session")
def jump(model):
    desc = gait.gen_jump(model, 1, [[0.1, 0.0]])
    return desc, centopt.solve(desc, model)


def random_quat(rng):
    q = rng.standard_normal(4)
    return q / np.linalg.norm(q)
