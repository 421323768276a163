import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadplan import ik, so3
from quadplan.ik import CentroidalRef, IkWeights, ik_step
from quadplan.model import RobotModel, com_of, feet_kinematics, forward_kinematics, nominal_state

MODEL = RobotModel()


def _hold(q):
    c, _ = com_of(MODEL, q)
    return CentroidalRef(c, np.zeros(3), np.zeros(3), base_orient_ref=q.base_quat.copy())


@settings(max_examples=50)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-3, 3))
def test_fixed_point(x, y, yaw):
    q = nominal_state(MODEL, x, y, yaw)
    v = ik_step(q, _hold(q), np.zeros((4, 3)), MODEL)
    assert np.linalg.norm(v) <= 1e-9


def test_com_velocity_task_with_planted_feet():
    q = nominal_state(MODEL)
    des = _hold(q)
    des.lin_momentum = np.array([0.1, 0.0, 0.0]) * MODEL.mass
    v = ik_step(q, des, np.zeros((4, 3)), MODEL)
    c, jc = com_of(MODEL, q)
    _, jf = feet_kinematics(MODEL, q)
    assert np.allclose(jc @ v, [0.1, 0.0, 0.0], atol=1e-3)
    assert np.max(np.linalg.norm(jf @ v, axis=1)) <= 1e-3


def test_foot_residual_shrinks_with_weight():
    q = nominal_state(MODEL)
    q.joint_pos = q.joint_pos + 0.05
    des = _hold(q)
    des.com = des.com + [0.03, -0.02, 0.01]
    residuals = []
    for wf in (1.0, 10.0, 100.0, 1000.0):
        v = ik_step(q, des, np.zeros((4, 3)), MODEL, IkWeights(feet=wf))
        _, jf = feet_kinematics(MODEL, q)
        residuals.append(np.linalg.norm(jf @ v))
    assert all(b < a for a, b in zip(residuals, residuals[1:]))


def test_orientation_task_turns_base():
    q = nominal_state(MODEL)
    des = _hold(q)
    des.base_orient_ref = so3.yaw_quat(0.1)
    v = ik_step(q, des, np.zeros((4, 3)), MODEL, IkWeights(feet=0.0))
    assert v[5] > 0.0


def test_standing_rollout_holds_posture(standing):
    desc, traj = standing
    plan = ik.rollout(desc, ik.TrajectorySource(traj), MODEL)
    excursion = np.abs(plan.joint_pos - plan.joint_pos[0]).max()
    assert excursion <= 1e-3
    assert plan.limit_violations == 0


def test_walk_rollout_tracks_plan(walk):
    desc, traj, plan = walk
    err = np.linalg.norm(plan.com_kin - traj.com, axis=1)
    assert np.sqrt(np.mean(err ** 2)) <= 5e-3
    # swing feet land on their planned contacts
    for e, phases in enumerate(desc.plan):
        for ph in phases:
            if not ph.in_stance:
                k = desc.step_of(ph.t_end)
                feet = forward_kinematics(MODEL, plan.state(k))
                assert np.linalg.norm(feet[e] - ph.stance_pos) <= 5e-3
    assert np.allclose(np.linalg.norm(plan.base_quat, axis=1), 1.0, atol=1e-9)
    assert plan.source == "optimizer"


def test_rollout_is_bitwise_deterministic(walk):
    desc, traj, plan = walk
    again = ik.rollout(desc, ik.TrajectorySource(traj), MODEL)
    for name in ("base_pos", "base_quat", "joint_pos", "velocity", "com_ref", "wrench_ref"):
        assert np.array_equal(getattr(plan, name), getattr(again, name))


def test_plan_state_and_wrench_rows(walk):
    desc, traj, plan = walk
    assert plan.horizon == desc.horizon
    assert np.array_equal(plan.wrench_ref[:-1], traj.wrenches())
    assert np.array_equal(plan.wrench_ref[-1], plan.wrench_ref[-2])
    s = plan.state(5)
    assert np.array_equal(s.velocity, plan.velocity[5])


def test_rollout_hook_and_joint_limit_flag(caplog):
    model = RobotModel(joint_limits=np.tile([[-0.8, 0.8], [-2.5, 2.5], [-0.1, 0.1]], (4, 1)))
    from quadplan import gait
    desc = gait.gen_standing(model, duration=0.05)

    class Still:
        name = "still"

        def initial(self):
            c, _ = com_of(model, nominal_state(model))
            return CentroidalRef(c, np.zeros(3), np.zeros(3))

        def step(self, t, history):
            return self.initial()
    seen = []
    plan = ik.rollout(desc, Still(), model, on_step=lambda t, q: seen.append(t))
    assert seen == list(range(1, desc.horizon + 1))
    assert plan.limit_violations == desc.horizon
    assert "joint limit" in caplog.text
    assert plan.source == "still"


def test_quaternion_norm_preserved_over_long_rollout():
    q = nominal_state(MODEL)
    v = np.zeros(18)
    v[3:6] = [0.3, -0.2, 0.5]
    from quadplan.model import integrate
    for _ in range(20000):
        q = integrate(q, v, 0.01)
    assert abs(np.linalg.norm(q.base_quat) - 1.0) <= 1e-9


@pytest.mark.parametrize("task", ["walk", "standing"])
def test_foot_references_match_description(task, request):
    desc = request.getfixturevalue(task)[0]
    pos, vel = ik.foot_references(desc)
    stance = desc.stance_table()
    assert np.allclose(vel[stance], 0.0)
    assert np.allclose(pos[stance], desc.location_table()[stance])
