"""Centroidal plant and closed-loop tracking of whole-body plans.

The plant integrates the centroidal dynamics under the allocated contact
forces (force tracking at the feet is taken as ideal).  A kinematic mirror of
the robot follows the IK joint velocities through a first-order lag and is
translated so its CoM coincides with the plant CoM.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from quadplan import so3
from quadplan.centopt.dynamics import CentroidalState
from quadplan.ik import WholeBodyPlan
from quadplan.model import RobotModel, WholeBodyState, com_of, feet_kinematics, world_inertia
from quadplan.wbc import CentroidalSnapshot, WbcGains, allocate_forces, compute_wrench, leg_impedance_torque

log = logging.getLogger(__name__)

JOINT_LAG = 0.02
FALL_HEIGHT_RATIO = 0.6
FALL_ORIENTATION = 1.0


@dataclass(eq=False)
class PlantState:
    centroidal: CentroidalState
    base_quat: np.ndarray
    body: WholeBodyState
    time: float = 0.0

    def copy(self) -> "PlantState":
        c = self.centroidal
        return PlantState(CentroidalState(c.com.copy(), c.lin_momentum.copy(), c.ang_momentum.copy()),
                          self.base_quat.copy(), self.body.copy(), self.time)


def plant_step(state: PlantState, forces, foot_positions, model: RobotModel, dt: float,
               disturbance=None, joint_cmd=None, joint_lag: float = JOINT_LAG) -> PlantState:
    """Advance the plant one step.

    ``disturbance`` is an external force on the CoM.  The base turns with
    ``I^-1 k``; joints approach ``joint_cmd`` velocities with time constant
    ``joint_lag``.
    """
    forces = np.asarray(forces, dtype=float).reshape(-1, 3)
    feet = np.asarray(foot_positions, dtype=float).reshape(-1, 3)
    c0 = state.centroidal
    ext = np.zeros(3) if disturbance is None else np.asarray(disturbance, dtype=float)
    lin = c0.lin_momentum + dt * (model.mass * model.gravity_vec + forces.sum(axis=0) + ext)
    com = c0.com + (dt / model.mass) * lin
    ang = c0.ang_momentum + dt * np.cross(feet - com, forces).sum(axis=0)
    omega = np.linalg.solve(world_inertia(model, state.base_quat), ang)
    quat = so3.boxplus(state.base_quat, dt * omega)

    body = state.body
    jv = body.joint_vel.copy()
    if joint_cmd is not None:
        jv += (1.0 - math.exp(-dt / joint_lag)) * (np.asarray(joint_cmd, dtype=float) - jv)
    jp = body.joint_pos + dt * jv
    mirror = WholeBodyState(body.base_pos.copy(), quat, jp, lin / model.mass, omega, jv)
    c_kin, _ = com_of(model, mirror)
    mirror.base_pos = mirror.base_pos + (com - c_kin)
    return PlantState(CentroidalState(com, lin, ang), quat, mirror, state.time + dt)


class OUDisturbance:
    """Zero-mean Ornstein-Uhlenbeck force with stationary std ``sigma`` (N)."""

    def __init__(self, sigma: float, tau: float, dt: float, seed: int | None):
        self.sigma, self.decay = sigma, math.exp(-dt / tau)
        self.rng = np.random.default_rng(seed)
        self.value = self.sigma * self.rng.standard_normal(3) if sigma > 0 else np.zeros(3)

    def __call__(self) -> np.ndarray:
        if self.sigma <= 0:
            return np.zeros(3)
        out = self.value.copy()
        self.value = self.decay * self.value + self.sigma * math.sqrt(1.0 - self.decay ** 2) * \
            self.rng.standard_normal(3)
        return out


@dataclass(eq=False)
class TrackingLog:
    dt: float
    plan_com: np.ndarray      # (n+1, 3)
    plan_lin: np.ndarray
    plan_ang: np.ndarray
    plan_quat: np.ndarray     # (n+1, 4)
    sim_com: np.ndarray
    sim_lin: np.ndarray
    sim_ang: np.ndarray
    sim_quat: np.ndarray
    forces: np.ndarray        # (n, 4, 3), zero rows for swing feet
    torques: np.ndarray       # (n, 4, 3)
    slack: np.ndarray         # (n,)
    fell: bool = False
    fall_step: int = -1
    steps: int = 0            # completed plant steps
    meta: dict = field(default_factory=dict)

    @property
    def rows(self) -> int:
        return self.steps + 1


def momentum_rate_wrench(plan: WholeBodyPlan, model: RobotModel) -> np.ndarray:
    """Contact wrench implied by the plan's own momentum sequence, (n, 6).

    Equals ``wrench_ref`` for a dynamically consistent plan; for a learned plan
    it keeps the feed-forward consistent with the predicted momenta.
    """
    force = np.diff(plan.lin_ref, axis=0) / plan.dt - model.mass * model.gravity_vec
    moment = np.diff(plan.ang_ref, axis=0) / plan.dt
    return np.hstack([force, moment])


def _snapshot(plan: WholeBodyPlan, com, t: int, wrench) -> CentroidalSnapshot:
    return CentroidalSnapshot(com[t], plan.lin_ref[t], plan.ang_ref[t], plan.base_quat[t], wrench[t])


def reference_com(plan: WholeBodyPlan, which: str = "kinematic") -> np.ndarray:
    """CoM the controller tracks: the posture's own CoM or the planned one."""
    if which == "kinematic":
        return plan.com_kin
    if which == "planned":
        return plan.com_ref
    raise ValueError(f"com_reference must be 'kinematic' or 'planned', got '{which}'")


def initial_plant(plan: WholeBodyPlan, model: RobotModel, com=None) -> PlantState:
    com = plan.com_ref if com is None else com
    body = plan.state(0)
    c_kin, _ = com_of(model, body)
    body.base_pos = body.base_pos + (com[0] - c_kin)
    cs = CentroidalState(com[0].copy(), plan.lin_ref[0].copy(), plan.ang_ref[0].copy())
    return PlantState(cs, plan.base_quat[0].copy(), body)


def run_tracking(plan: WholeBodyPlan, model: RobotModel, gains: WbcGains | None = None,
                 seed: int | None = 0, disturbance_std: float = 0.0, disturbance_tau: float = 0.2,
                 fall_height_ratio: float = FALL_HEIGHT_RATIO,
                 fall_orientation: float = FALL_ORIENTATION, feedforward: str = "momentum",
                 com_reference: str = "kinematic") -> TrackingLog:
    """Track ``plan`` in closed loop; stops early and flags a fall when the CoM
    drops below ``fall_height_ratio * nominal_height`` or the base orientation
    error exceeds ``fall_orientation`` rad.

    ``feedforward`` picks the reference wrench: ``"momentum"`` (the plan's
    momentum rate) or ``"wrench"`` (the plan's wrench column).
    ``com_reference`` picks the tracked CoM: ``"kinematic"`` follows the IK
    posture, ``"planned"`` the centroidal plan.  For a learned plan the
    posture is the smoother of the two.
    """
    if feedforward not in ("momentum", "wrench"):
        raise ValueError(f"feedforward must be 'momentum' or 'wrench', got '{feedforward}'")
    g = gains or WbcGains(mu=model.friction_mu)
    n, dt = plan.horizon, plan.dt
    ff = momentum_rate_wrench(plan, model) if feedforward == "momentum" else plan.wrench_ref
    ref_com = reference_com(plan, com_reference)
    dist = OUDisturbance(disturbance_std, disturbance_tau, dt, seed)
    state = initial_plant(plan, model, ref_com)

    sim_com = np.full((n + 1, 3), np.nan)
    sim_lin = np.full((n + 1, 3), np.nan)
    sim_ang = np.full((n + 1, 3), np.nan)
    sim_quat = np.full((n + 1, 4), np.nan)
    forces = np.zeros((n, 4, 3))
    torques = np.zeros((n, 4, 3))
    slack = np.zeros(n)

    def record(k, st):
        sim_com[k], sim_lin[k], sim_ang[k] = st.centroidal.com, st.centroidal.lin_momentum, \
            st.centroidal.ang_momentum
        sim_quat[k] = st.base_quat

    record(0, state)
    fell, fall_step, steps = False, -1, 0
    for t in range(n):
        cs = state.centroidal
        meas = CentroidalSnapshot(cs.com, cs.lin_momentum, cs.ang_momentum, state.base_quat)
        W = compute_wrench(_snapshot(plan, ref_com, t, ff), meas, g, model.mass, world_inertia(model, state.base_quat))
        d = dist()
        stance = np.flatnonzero(plan.stance[t])
        feet = plan.foot_pos[t, stance]
        # moments are taken about the CoM the plant will reach this step
        lin_next = cs.lin_momentum + dt * (model.mass * model.gravity_vec + W.force)
        c_next = cs.com + dt / model.mass * lin_next
        alloc = allocate_forces(W, feet - c_next, g)
        forces[t, stance] = alloc.forces
        slack[t] = alloc.slack_norm

        meas_feet, jac = feet_kinematics(model, state.body)
        meas_vel = jac @ state.body.velocity
        for e in range(4):
            torques[t, e] = leg_impedance_torque(jac[e], forces[t, e], plan.foot_pos[t, e], plan.foot_vel[t, e],
                                                 meas_feet[e], meas_vel[e], g, leg=e)

        state = plant_step(state, alloc.forces, feet, model, dt, disturbance=d,
                           joint_cmd=plan.velocity[t + 1, 6:])
        record(t + 1, state)
        steps = t + 1
        ori_err = float(np.linalg.norm(so3.boxminus(plan.base_quat[t + 1], state.base_quat)))
        if state.centroidal.com[2] < fall_height_ratio * model.nominal_height or ori_err > fall_orientation:
            fell, fall_step = True, t + 1
            log.warning("fall at step %d (com z %.3f m, orientation error %.3f rad)",
                        t + 1, state.centroidal.com[2], ori_err)
            break
    return TrackingLog(dt, ref_com.copy(), plan.lin_ref.copy(), plan.ang_ref.copy(),
                       plan.base_quat.copy(), sim_com, sim_lin, sim_ang, sim_quat, forces, torques, slack,
                       fell, fall_step, steps,
                       {"seed": seed, "disturbance_std": disturbance_std, "source": plan.source,
                        "feedforward": feedforward, "com_reference": com_reference})


def tracking_metrics(log_: TrackingLog) -> dict:
    """Mean and max CoM distance (m) and geodesic orientation error (rad)
    over the simulated rows."""
    k = log_.rows
    com = np.linalg.norm(log_.plan_com[:k] - log_.sim_com[:k], axis=1)
    ori = np.array([np.linalg.norm(so3.boxminus(a, b)) for a, b in zip(log_.plan_quat[:k], log_.sim_quat[:k])])
    return {"com_err_mean": float(com.mean()), "com_err_max": float(com.max()),
            "ori_err_mean": float(ori.mean()), "ori_err_max": float(ori.max())}
