import configparser
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadplan import so3
from quadplan.model import RobotModel, feet_kinematics, nominal_state
from quadplan.wbc import (AllocationError, CentroidalSnapshot, WbcGains, Wrench, allocate_forces, compute_wrench,
                          gains_from_config, leg_impedance_torque)

MODEL = RobotModel()
seeds = st.integers(0, 2 ** 32 - 1)


def _snap(**kw):
    base = dict(com=np.zeros(3), lin_momentum=np.zeros(3), ang_momentum=np.zeros(3),
                base_quat=np.array([1.0, 0, 0, 0]), wrench=np.array([1.0, 2, 3, 4, 5, 6]))
    base.update(kw)
    return CentroidalSnapshot(**base)


def _residual(W, feet, alloc):
    F = alloc.forces
    total = np.concatenate([F.sum(axis=0), np.cross(feet, F).sum(axis=0)]) if len(F) else np.zeros(6)
    return np.linalg.norm(total + alloc.eta - W)


def test_wrench_is_feedforward_at_zero_error():
    ref = _snap()
    w = compute_wrench(ref, _snap(), WbcGains())
    assert np.array_equal(w.as_vector(), ref.wrench)


def test_com_gain_arithmetic():
    w = compute_wrench(_snap(com=np.array([0.01, 0, 0])), _snap(), WbcGains(K_c=100.0))
    assert np.allclose(w.force, [2.0, 2.0, 3.0]) and np.allclose(w.moment, [4, 5, 6])


def test_yaw_error_moment():
    ref = _snap(base_quat=so3.yaw_quat(math.pi / 6))
    w = compute_wrench(ref, _snap(), WbcGains(K_b=10.0))
    assert np.allclose(w.moment, [4, 5, 6 + 10 * math.pi / 6])


def test_momentum_damping_uses_velocities():
    ref = _snap(lin_momentum=np.array([0.0, 0.0, 2.0]), ang_momentum=np.array([0.3, 0.0, 0.0]))
    inertia = np.diag([0.1, 0.2, 0.3])
    w = compute_wrench(ref, _snap(), WbcGains(D_c=5.0, D_b=2.0), mass=2.0, inertia=inertia)
    assert np.allclose(w.force, [1, 2, 3 + 5.0])
    assert np.allclose(w.moment, [4 + 2.0 * 3.0, 5, 6])


def test_symmetric_stance_shares_weight():
    mg = MODEL.mass * 9.81
    feet = np.array([[0.2, 0.15, -0.3], [0.2, -0.15, -0.3], [-0.2, 0.15, -0.3], [-0.2, -0.15, -0.3]])
    alloc = allocate_forces(Wrench(np.array([0, 0, mg]), np.zeros(3)), feet)
    assert np.allclose(alloc.forces, [[0, 0, mg / 4]] * 4, atol=1e-6)
    assert alloc.slack_norm <= 1e-6


def test_no_stance_feet_puts_wrench_in_slack():
    W = np.array([1.0, -2.0, 30.0, 0.1, 0.2, -0.3])
    alloc = allocate_forces(W, np.zeros((0, 3)))
    assert alloc.forces.shape == (0, 3)
    assert np.allclose(alloc.eta, W, atol=1e-9)


def _three_foot_scene(rng):
    feet = np.column_stack([rng.uniform(-0.25, 0.25, 3), rng.uniform(-0.2, 0.2, 3), rng.uniform(-0.35, -0.25, 3)])
    # a wrench generated by forces inside the friction pyramid is feasible
    fz = rng.uniform(5.0, 40.0, 3)
    ft = rng.uniform(-0.3, 0.3, (3, 2)) * fz[:, None]
    F = np.column_stack([ft, fz])
    return feet, np.concatenate([F.sum(axis=0), np.cross(feet, F).sum(axis=0)])


@settings(max_examples=200)
@given(seeds)
def test_feasible_three_foot_scenes_match_wrench(seed):
    feet, W = _three_foot_scene(np.random.default_rng(seed))
    alloc = allocate_forces(W, feet)
    F = alloc.forces
    total = np.concatenate([F.sum(axis=0), np.cross(feet, F).sum(axis=0)])
    assert np.linalg.norm(total - W) <= 1e-5
    assert alloc.slack_norm <= 1e-5
    assert np.all(F[:, 2] >= -1e-9)
    mu = WbcGains().mu
    assert np.all(np.abs(F[:, :2]) <= mu * F[:, 2:3] + np.abs(alloc.zeta).max() + 1e-6)


@settings(max_examples=100)
@given(seeds)
def test_equality_with_slack_holds_on_infeasible_scenes(seed):
    rng = np.random.default_rng(seed)
    feet = rng.uniform(-0.3, 0.3, (int(rng.integers(1, 5)), 3))
    W = rng.normal(size=6) * 30.0
    alloc = allocate_forces(W, feet)
    assert _residual(W, feet, alloc) <= 1e-5
    assert np.all(alloc.forces[:, 2] >= -1e-9)


@settings(max_examples=30)
@given(seeds)
def test_alpha_monotonicity(seed):
    rng = np.random.default_rng(seed)
    feet = rng.uniform(-0.3, 0.3, (2, 3))
    W = rng.normal(size=6) * 20.0
    # the penalized slack is the pair (eta, zeta); eta alone may trade against zeta
    slack = [allocate_forces(W, feet, WbcGains(alpha=a)).slack_norm for a in (1e1, 1e2, 1e3, 1e4, 1e5)]
    assert all(b <= a + 1e-7 for a, b in zip(slack, slack[1:]))


def test_allocation_failure_is_explicit():
    with pytest.raises(AllocationError):
        allocate_forces(np.full(6, 1e3), np.zeros((2, 3)) + [0, 0, -0.3], tol=1e-300)


def test_impedance_torque_examples():
    q = nominal_state(MODEL)
    pos, jac = feet_kinematics(MODEL, q)
    zero = leg_impedance_torque(jac[1], np.zeros(3), pos[1], np.zeros(3), pos[1], np.zeros(3), leg=1)
    assert np.array_equal(zero, np.zeros(3))
    J = jac[2][:, 12:15]
    tau = leg_impedance_torque(J, [0, 0, 5.0], pos[2], 0, pos[2], 0)
    by_hand = [sum(J[r, c] * (5.0 if r == 2 else 0.0) for r in range(3)) for c in range(3)]
    assert np.allclose(tau, by_hand, atol=1e-14)
    err = np.array([0.01, -0.02, 0.005])
    t1 = leg_impedance_torque(J, 0, pos[2] + err, 0, pos[2], 0, WbcGains(K_imp=40.0))
    t2 = leg_impedance_torque(J, 0, pos[2] + err, 0, pos[2], 0, WbcGains(K_imp=80.0))
    assert np.allclose(t2, 2 * t1, rtol=1e-12)
    with pytest.raises(ValueError):
        leg_impedance_torque(jac[0], np.zeros(3), pos[0], 0, pos[0], 0)


def test_gains_validation_and_config():
    with pytest.raises(ValueError):
        WbcGains(K_c=-1.0)
    with pytest.raises(ValueError):
        WbcGains(alpha=0.0)
    cp = configparser.ConfigParser()
    cp.read_string("[wbc]\nK_c = 10 20 30\nalpha = 5e3\n")
    g = gains_from_config(cp)
    assert np.array_equal(g.K_c, [10, 20, 30]) and g.alpha == 5e3 and np.array_equal(g.D_c, [5, 5, 5])
    cp.read_string("[wbc]\nbogus = 1\n")
    with pytest.raises(ValueError, match="bogus"):
        gains_from_config(cp)
