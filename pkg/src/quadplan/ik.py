"""Differential inverse kinematics and whole-body roll-outs.

A roll-out queries a centroidal step source once per step, solves a
weighted damped least-squares task stack for the generalized velocity and
integrates it.  The source is either a precomputed optimizer trajectory or
the step-wise network predictor.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from quadplan import so3
from quadplan.gait import MotionDescription
from quadplan.model import (N_LEGS, NQ, RobotModel, WholeBodyState, com_of, feet_kinematics,
                            integrate, nominal_state, world_inertia)

log = logging.getLogger(__name__)


@dataclass
class IkWeights:
    com: float = 10.0
    orient: float = 10.0
    feet: float = 100.0
    posture: float = 0.1
    damping: float = 1e-6
    k_fuse: float = 5.0
    k_ori: float = 5.0
    k_post: float = 1.0


@dataclass
class CentroidalRef:
    """Desired centroidal quantities for one step, world frame."""
    com: np.ndarray
    lin_momentum: np.ndarray
    ang_momentum: np.ndarray
    wrench: np.ndarray = field(default_factory=lambda: np.zeros(6))
    base_orient_ref: np.ndarray = field(default_factory=lambda: so3.IDENTITY.copy())


def ik_step(q: WholeBodyState, des: CentroidalRef, des_foot_vel, model: RobotModel,
            weights: IkWeights | None = None, com_jac=None, foot_jac=None) -> np.ndarray:
    """Generalized velocity (18) from the weighted task stack.

    Tasks: CoM velocity fused with a CoM position correction, base angular
    velocity from the orientation error plus the momentum feed-forward, one
    linear-velocity task per foot, and a weak posture regularizer.
    ``com_jac`` and ``foot_jac`` may be passed when already computed.
    """
    w = weights or IkWeights()
    if com_jac is None:
        c, jc = com_of(model, q)
    else:
        c, jc = com_jac
    if foot_jac is None:
        _, jf = feet_kinematics(model, q)
    else:
        jf = foot_jac
    m = model.mass

    # weights scale task rows, so each task costs weight^2 * residual^2
    H = w.damping * np.eye(NQ)
    g = np.zeros(NQ)

    b_com = np.asarray(des.lin_momentum) / m + w.k_fuse * (np.asarray(des.com) - c)
    H += w.com ** 2 * jc.T @ jc
    g += w.com ** 2 * jc.T @ b_com

    i_w = world_inertia(model, q.base_quat)
    b_ori = w.k_ori * so3.boxminus(des.base_orient_ref, q.base_quat) + np.linalg.solve(
        i_w, np.asarray(des.ang_momentum, dtype=float))
    H[3:6, 3:6] += w.orient ** 2 * np.eye(3)
    g[3:6] += w.orient ** 2 * b_ori

    jf2 = jf.reshape(3 * N_LEGS, NQ)
    H += w.feet ** 2 * jf2.T @ jf2
    g += w.feet ** 2 * jf2.T @ np.asarray(des_foot_vel, dtype=float).reshape(-1)

    H[6:, 6:] += w.posture ** 2 * np.eye(12)
    g[6:] += w.posture ** 2 * w.k_post * (model.nominal_posture - q.joint_pos)
    return np.linalg.solve(H, g)


class TrajectorySource:
    """Replays an optimizer trajectory as a step source."""

    name = "optimizer"

    def __init__(self, traj):
        self.traj = traj
        self._wrenches = traj.wrenches()

    def initial(self) -> CentroidalRef:
        return CentroidalRef(self.traj.com[0].copy(), self.traj.lin_momentum[0].copy(),
                             self.traj.ang_momentum[0].copy(), self._wrenches[0].copy())

    def step(self, t: int, history) -> CentroidalRef:
        tr = self.traj
        return CentroidalRef(tr.com[t + 1].copy(), tr.lin_momentum[t + 1].copy(),
                             tr.ang_momentum[t + 1].copy(), self._wrenches[t].copy())


@dataclass(eq=False)
class WholeBodyPlan:
    """Roll-out result; row ``t`` holds the state and references at step ``t``.

    ``wrench_ref[t]`` is the contact wrench commanded over ``[t, t+1)``; the
    last row repeats the final command.
    """
    dt: float
    base_pos: np.ndarray      # (N+1, 3)
    base_quat: np.ndarray     # (N+1, 4)
    joint_pos: np.ndarray     # (N+1, 12)
    velocity: np.ndarray      # (N+1, 18), velocity that led to the row's state
    com_ref: np.ndarray       # (N+1, 3)
    lin_ref: np.ndarray
    ang_ref: np.ndarray
    wrench_ref: np.ndarray    # (N+1, 6)
    com_kin: np.ndarray       # (N+1, 3) CoM of the kinematic posture
    stance: np.ndarray        # (N+1, 4)
    foot_pos: np.ndarray      # (N+1, 4, 3) planned foot positions
    foot_vel: np.ndarray      # (N+1, 4, 3)
    source: str = "optimizer"
    plan_time: float = 0.0
    limit_violations: int = 0

    @property
    def horizon(self) -> int:
        return self.base_pos.shape[0] - 1

    def state(self, t: int) -> WholeBodyState:
        v = self.velocity[t]
        return WholeBodyState(self.base_pos[t].copy(), self.base_quat[t].copy(),
                              self.joint_pos[t].copy(), v[0:3].copy(), v[3:6].copy(), v[6:].copy())


def foot_references(desc: MotionDescription):
    """Planned foot positions and velocities (N+1, 4, 3) on the grid."""
    n = desc.horizon + 1
    pos = np.zeros((n, N_LEGS, 3))
    vel = np.zeros((n, N_LEGS, 3))
    for k in range(n):
        t = k * desc.dt
        for e in range(N_LEGS):
            pos[k, e], vel[k, e] = desc.foot_reference(e, t)
    return pos, vel


def orientation_ref(desc: MotionDescription, k: int) -> np.ndarray:
    return so3.yaw_quat(desc.pattern_at_step(k).frame[2])


def rollout(description: MotionDescription, source, model: RobotModel,
            weights: IkWeights | None = None, q0: WholeBodyState | None = None,
            on_step=None) -> WholeBodyPlan:
    """Integrate the IK stack along ``description`` driven by ``source``.

    Foot tasks use a deadbeat correction towards the next planned foot
    position, so a stance foot's desired velocity is zero when it sits on its
    contact.  ``on_step(t, q)`` is an optional diagnostic hook.
    """
    t_start = time.perf_counter()
    w = weights or IkWeights()
    desc = description
    n, dt = desc.horizon, desc.dt
    q = q0.copy() if q0 is not None else nominal_state(model, *desc.start)
    fpos, fvel = foot_references(desc)
    lo, hi = model.joint_limits[:, 0], model.joint_limits[:, 1]

    base_pos = np.zeros((n + 1, 3))
    base_quat = np.zeros((n + 1, 4))
    joint_pos = np.zeros((n + 1, 12))
    velocity = np.zeros((n + 1, NQ))
    com_ref = np.zeros((n + 1, 3))
    lin_ref = np.zeros((n + 1, 3))
    ang_ref = np.zeros((n + 1, 3))
    wrench_ref = np.zeros((n + 1, 6))
    com_kin = np.zeros((n + 1, 3))

    history = [q]
    c0, jc = com_of(model, q)
    init = source.initial()
    com_ref[0], lin_ref[0], ang_ref[0] = init.com, init.lin_momentum, init.ang_momentum
    violations = 0
    for t in range(n):
        base_pos[t], base_quat[t], joint_pos[t] = q.base_pos, q.base_quat, q.joint_pos
        velocity[t] = q.velocity
        com_kin[t] = c0
        ref = source.step(t, history)
        ref.base_orient_ref = orientation_ref(desc, t)
        wrench_ref[t] = ref.wrench
        com_ref[t + 1], lin_ref[t + 1], ang_ref[t + 1] = ref.com, ref.lin_momentum, ref.ang_momentum
        feet, jf = feet_kinematics(model, q)
        des_vel = (fpos[t + 1] - feet) / dt
        v = ik_step(q, ref, des_vel, model, w, com_jac=(c0, jc), foot_jac=jf)
        q = integrate(q, v, dt)
        if np.any(q.joint_pos < lo) or np.any(q.joint_pos > hi):
            violations += 1
            log.warning("joint limit exceeded at step %d", t + 1)
        history.append(q)
        if len(history) > 16:
            del history[0]
        c0, jc = com_of(model, q)
        if on_step is not None:
            on_step(t + 1, q)
    base_pos[n], base_quat[n], joint_pos[n] = q.base_pos, q.base_quat, q.joint_pos
    velocity[n] = q.velocity
    com_kin[n] = c0
    wrench_ref[n] = wrench_ref[n - 1] if n > 0 else init.wrench
    return WholeBodyPlan(dt=dt, base_pos=base_pos, base_quat=base_quat, joint_pos=joint_pos,
                         velocity=velocity, com_ref=com_ref, lin_ref=lin_ref, ang_ref=ang_ref,
                         wrench_ref=wrench_ref, com_kin=com_kin, stance=desc.stance_table().copy(),
                         foot_pos=fpos, foot_vel=fvel, source=getattr(source, "name", "custom"),
                         plan_time=time.perf_counter() - t_start, limit_violations=violations)
