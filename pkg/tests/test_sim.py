import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadplan import ik, so3
from quadplan.centopt.dynamics import CentroidalState
from quadplan.model import RobotModel, com_of, forward_kinematics, nominal_state
from quadplan.sim import (OUDisturbance, PlantState, TrackingLog, momentum_rate_wrench, plant_step, run_tracking,
                          tracking_metrics)

MODEL = RobotModel()


def _standing_plant():
    q = nominal_state(MODEL)
    c, _ = com_of(MODEL, q)
    return PlantState(CentroidalState(c, np.zeros(3), np.zeros(3)), q.base_quat.copy(), q), forward_kinematics(MODEL, q)


def test_equilibrium_is_a_fixed_point():
    s0, feet = _standing_plant()
    # forces that cancel gravity with zero net moment about the CoM
    c = s0.centroidal.com
    A = np.zeros((6, 12))
    for i in range(4):
        A[:3, 3 * i:3 * i + 3] = np.eye(3)
        A[3:, 3 * i:3 * i + 3] = so3.skew(feet[i] - c)
    F = np.linalg.lstsq(A, np.r_[0, 0, MODEL.mass * 9.81, 0, 0, 0], rcond=None)[0].reshape(4, 3)
    s = s0
    for _ in range(100):
        s = plant_step(s, F, feet, MODEL, 0.01, joint_cmd=np.zeros(12))
    assert np.allclose(s.centroidal.com, c, atol=1e-9)
    assert np.allclose(s.centroidal.lin_momentum, 0, atol=1e-9)
    assert np.allclose(s.centroidal.ang_momentum, 0, atol=1e-9)
    assert np.allclose(s.base_quat, s0.base_quat, atol=1e-9)
    assert s.time == pytest.approx(1.0)


@settings(max_examples=50)
@given(st.integers(0, 2 ** 32 - 1))
def test_zero_forces_give_ballistic_motion(seed):
    rng = np.random.default_rng(seed)
    s, _ = _standing_plant()
    s.centroidal.lin_momentum = rng.normal(size=3)
    s.centroidal.ang_momentum = rng.normal(size=3) * 0.1
    c0, l0, k0 = s.centroidal.com.copy(), s.centroidal.lin_momentum.copy(), s.centroidal.ang_momentum.copy()
    n, dt = 40, 0.01
    for _ in range(n):
        s = plant_step(s, np.zeros((0, 3)), np.zeros((0, 3)), MODEL, dt)
    g = MODEL.gravity_vec
    assert np.allclose(s.centroidal.lin_momentum, l0 + n * dt * MODEL.mass * g, atol=1e-12)
    # explicit Euler with the updated momentum: c_n = c_0 + n dt v0 + dt^2 g n(n+1)/2
    expect = c0 + n * dt * l0 / MODEL.mass + dt * dt * g * n * (n + 1) / 2
    assert np.allclose(s.centroidal.com, expect, atol=1e-12)
    assert np.array_equal(s.centroidal.ang_momentum, k0)
    assert abs(np.linalg.norm(s.base_quat) - 1) <= 1e-12


def test_work_energy_bookkeeping_for_a_vertical_hop():
    s, _ = _standing_plant()
    m, g, dt = MODEL.mass, 9.81, 1e-4
    c_start = s.centroidal.com.copy()
    foot = np.array([[c_start[0], c_start[1], 0.0]])
    work = 0.0
    for k in range(int(0.6 / dt)):
        t = k * dt
        f = m * g * (1.0 + 0.8 * math.sin(2 * math.pi * t / 0.6))
        z0 = s.centroidal.com[2]
        s = plant_step(s, [[0.0, 0.0, f]], foot, MODEL, dt)
        work += f * (s.centroidal.com[2] - z0)
    v = s.centroidal.lin_momentum / m
    delta = 0.5 * m * v @ v + m * g * (s.centroidal.com[2] - c_start[2])
    assert abs(work - delta) <= 1e-3 * abs(work)


def test_joint_lag_time_constant():
    s, feet = _standing_plant()
    cmd = np.ones(12)
    s1 = plant_step(s, np.zeros((0, 3)), np.zeros((0, 3)), MODEL, 0.02, joint_cmd=cmd)
    assert np.allclose(s1.body.joint_vel, 1 - math.exp(-1))
    c_kin, _ = com_of(MODEL, s1.body)
    assert np.allclose(c_kin, s1.centroidal.com, atol=1e-12)


def test_ou_disturbance_statistics_and_seed():
    d = OUDisturbance(0.1, 0.2, 0.01, seed=4)
    xs = np.array([d() for _ in range(40000)])
    assert xs.std() == pytest.approx(0.1, rel=0.1) and abs(xs.mean()) <= 0.02
    # lag-one autocorrelation equals exp(-dt / tau)
    r = np.corrcoef(xs[:-1, 0], xs[1:, 0])[0, 1]
    assert r == pytest.approx(math.exp(-0.05), abs=0.01)
    e = OUDisturbance(0.1, 0.2, 0.01, seed=4)
    assert np.array_equal(xs[:10], [e() for _ in range(10)])
    assert np.array_equal(OUDisturbance(0.0, 0.2, 0.01, seed=4)(), np.zeros(3))


def _log(plan_com, sim_com, plan_quat=None, sim_quat=None):
    n = len(plan_com)
    ident = np.tile([1.0, 0, 0, 0], (n, 1))
    z = np.zeros((n, 3))
    return TrackingLog(0.01, np.asarray(plan_com), z, z, ident if plan_quat is None else plan_quat,
                       np.asarray(sim_com), z, z, ident if sim_quat is None else sim_quat,
                       np.zeros((n - 1, 4, 3)), np.zeros((n - 1, 4, 3)), np.zeros(n - 1), steps=n - 1)


def test_metrics_examples():
    rng = np.random.default_rng(0)
    c = rng.normal(size=(50, 3))
    assert all(v == 0 for v in tracking_metrics(_log(c, c)).values())
    m = tracking_metrics(_log(c, c + [0.0, 0.01, 0.0]))
    assert m["com_err_mean"] == pytest.approx(0.01) and m["com_err_max"] == pytest.approx(0.01)
    # sawtooth 0, 1, ..., 9 mm repeated: mean 4.5 mm, max 9 mm
    saw = np.tile(np.arange(10), 6) * 1e-3
    m = tracking_metrics(_log(np.zeros((60, 3)), np.column_stack([saw, 0 * saw, 0 * saw])))
    assert m["com_err_mean"] == pytest.approx(4.5e-3) and m["com_err_max"] == pytest.approx(9e-3)
    yaw = np.array([so3.yaw_quat(a) for a in np.linspace(0, 0.3, 4)])
    m = tracking_metrics(_log(np.zeros((4, 3)), np.zeros((4, 3)), sim_quat=yaw))
    assert m["ori_err_mean"] == pytest.approx(0.15) and m["ori_err_max"] == pytest.approx(0.3)


def test_metrics_invariant_to_time_order():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(30, 3)), rng.normal(size=(30, 3))
    perm = rng.permutation(30)
    m1, m2 = tracking_metrics(_log(a, b)), tracking_metrics(_log(a[perm], b[perm]))
    assert m1["com_err_max"] == m2["com_err_max"]
    assert m1["com_err_mean"] == pytest.approx(m2["com_err_mean"], abs=1e-15)


def test_metrics_cover_only_simulated_rows():
    log_ = _log(np.zeros((5, 3)), np.zeros((5, 3)))
    log_.sim_com[3:] = np.nan
    log_.steps = 2
    assert math.isfinite(tracking_metrics(log_)["com_err_max"])


@pytest.fixture(scope="module")
def standing_plan(standing):
    desc, traj = standing
    return ik.rollout(desc, ik.TrajectorySource(traj), MODEL)


def test_standing_regulation_within_a_millimetre(standing_plan):
    log_ = run_tracking(standing_plan, MODEL)
    assert not log_.fell and log_.steps == standing_plan.horizon
    assert log_.steps * log_.dt >= 2.0 - 1e-9
    assert tracking_metrics(log_)["com_err_max"] <= 1e-3
    assert np.all(log_.forces[..., 2] >= -1e-9)


def test_tracking_is_deterministic_for_a_seed(standing_plan):
    a = run_tracking(standing_plan, MODEL, seed=5, disturbance_std=0.1)
    b = run_tracking(standing_plan, MODEL, seed=5, disturbance_std=0.1)
    c = run_tracking(standing_plan, MODEL, seed=6, disturbance_std=0.1)
    assert np.array_equal(a.sim_com, b.sim_com) and np.array_equal(a.forces, b.forces)
    assert not np.array_equal(a.sim_com, c.sim_com)


def test_large_push_is_reported_as_a_fall(standing_plan, caplog):
    log_ = run_tracking(standing_plan, MODEL, seed=1, disturbance_std=2000.0)
    assert log_.fell and 0 < log_.fall_step == log_.steps < standing_plan.horizon
    assert np.all(np.isnan(log_.sim_com[log_.steps + 1:]))
    assert "fall" in caplog.text


def test_optimizer_walk_tracked_without_fall(walk):
    _, _, plan = walk
    log_ = run_tracking(plan, MODEL, seed=0, disturbance_std=0.1)
    assert not log_.fell
    m = tracking_metrics(log_)
    assert m["com_err_max"] <= 0.02 and m["ori_err_max"] <= 0.1


def test_momentum_feedforward_matches_optimizer_wrench(walk):
    _, _, plan = walk
    assert np.allclose(momentum_rate_wrench(plan, MODEL), plan.wrench_ref[:-1], atol=1e-5)
    a = run_tracking(plan, MODEL, seed=3, disturbance_std=0.1)
    b = run_tracking(plan, MODEL, seed=3, disturbance_std=0.1, feedforward="wrench")
    assert a.meta["feedforward"] == "momentum" and not b.fell
    assert np.max(np.abs(a.sim_com - b.sim_com)) <= 1e-5
    with pytest.raises(ValueError, match="feedforward"):
        run_tracking(plan, MODEL, feedforward="bogus")


def test_com_reference_choice(walk):
    _, _, plan = walk
    kin = run_tracking(plan, MODEL, seed=1, disturbance_std=0.1)
    cen = run_tracking(plan, MODEL, seed=1, disturbance_std=0.1, com_reference="planned")
    assert kin.meta["com_reference"] == "kinematic" and not kin.fell and not cen.fell
    assert np.array_equal(kin.plan_com, plan.com_kin) and np.array_equal(cen.plan_com, plan.com_ref)
    # for an optimizer plan the two references nearly coincide
    assert np.max(np.abs(kin.sim_com - cen.sim_com)) <= 0.01
    with pytest.raises(ValueError, match="com_reference"):
        run_tracking(plan, MODEL, com_reference="bogus")
