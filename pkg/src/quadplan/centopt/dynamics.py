"""Discrete centroidal dynamics and constraint bookkeeping.

Ground is flat, so every contact frame is the world frame: the CoP offset
``z`` lives in the world x-y plane and the yaw torque acts about world z.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from quadplan.model import RobotModel


@dataclass
class CentroidalState:
    com: np.ndarray
    lin_momentum: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ang_momentum: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.com, self.lin_momentum, self.ang_momentum])


def contact_torque(foot_pos, com, force, cop=None, yaw_torque=None):
    """Moment about the CoM of one contact: ``(p - c) x f + (z x f) + tau e_z``."""
    tq = np.cross(np.asarray(foot_pos) - com, force)
    if cop is not None:
        z = np.array([cop[0], cop[1], 0.0])
        tq = tq + np.cross(z, force)
    if yaw_torque is not None:
        tq = tq + np.array([0.0, 0.0, yaw_torque])
    return tq


def integrate_step(prev: CentroidalState, forces, foot_positions, model: RobotModel, dt: float,
                   cops=None, yaw_torques=None) -> CentroidalState:
    """One explicit step; momentum first, then the CoM with the new momentum.

    ``forces`` and ``foot_positions`` are (k, 3) for the k active contacts.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    forces = np.asarray(forces, dtype=float).reshape(-1, 3)
    feet = np.asarray(foot_positions, dtype=float).reshape(-1, 3)
    lin = prev.lin_momentum + dt * (model.mass * model.gravity_vec + forces.sum(axis=0))
    com = prev.com + (dt / model.mass) * lin
    tq = np.cross(feet - com, forces).sum(axis=0)
    if cops is not None:
        cops = np.asarray(cops, dtype=float).reshape(-1, 2)
        z = np.zeros((cops.shape[0], 3))
        z[:, :2] = cops
        tq = tq + np.cross(z, forces).sum(axis=0)
    if yaw_torques is not None:
        tq[2] += float(np.sum(yaw_torques))
    ang = prev.ang_momentum + dt * tq
    return CentroidalState(com, lin, ang)


@dataclass(eq=False)
class CentroidalTrajectory:
    com: np.ndarray           # (N+1, 3)
    lin_momentum: np.ndarray  # (N+1, 3)
    ang_momentum: np.ndarray  # (N+1, 3)
    forces: np.ndarray        # (N, 4, 3), zero when not in stance
    cops: np.ndarray          # (N, 4, 2)
    yaw_torques: np.ndarray   # (N, 4)
    stance: np.ndarray        # (N, 4) bool
    feet: np.ndarray          # (N, 4, 3) contact positions
    dt: float
    cost: dict = field(default_factory=dict)
    converged: bool = True
    iterations: int = 0
    objective_history: list = field(default_factory=list)
    solve_time: float = 0.0

    @property
    def horizon(self) -> int:
        return self.forces.shape[0]

    def state(self, t: int) -> CentroidalState:
        return CentroidalState(self.com[t].copy(), self.lin_momentum[t].copy(), self.ang_momentum[t].copy())

    def wrenches(self) -> np.ndarray:
        """(N, 6) contact wrench about the CoM for each step: total force, moment."""
        out = np.zeros((self.horizon, 6))
        for i in range(self.horizon):
            s = self.stance[i]
            f = self.forces[i, s]
            out[i, :3] = f.sum(axis=0)
            c = self.com[i + 1]
            tq = np.cross(self.feet[i, s] - c, f).sum(axis=0)
            z = np.zeros((int(s.sum()), 3))
            z[:, :2] = self.cops[i, s]
            tq += np.cross(z, f).sum(axis=0)
            tq[2] += self.yaw_torques[i, s].sum()
            out[i, 3:] = tq
        return out


def reintegrate(traj: CentroidalTrajectory, model: RobotModel, initial: CentroidalState) -> CentroidalTrajectory:
    """Replace the states of ``traj`` by an exact roll-out of its contact inputs."""
    n = traj.horizon
    com = np.zeros((n + 1, 3))
    lin = np.zeros((n + 1, 3))
    ang = np.zeros((n + 1, 3))
    st = initial
    com[0], lin[0], ang[0] = st.com, st.lin_momentum, st.ang_momentum
    for i in range(n):
        s = traj.stance[i]
        st = integrate_step(st, traj.forces[i, s], traj.feet[i, s], model, traj.dt,
                            cops=traj.cops[i, s], yaw_torques=traj.yaw_torques[i, s])
        com[i + 1], lin[i + 1], ang[i + 1] = st.com, st.lin_momentum, st.ang_momentum
    traj.com, traj.lin_momentum, traj.ang_momentum = com, lin, ang
    return traj


def dynamics_residual(traj: CentroidalTrajectory, model: RobotModel) -> float:
    """Largest deviation of the stored states from the step recursion."""
    worst = 0.0
    for i in range(traj.horizon):
        s = traj.stance[i]
        nxt = integrate_step(traj.state(i), traj.forces[i, s], traj.feet[i, s], model, traj.dt,
                             cops=traj.cops[i, s], yaw_torques=traj.yaw_torques[i, s])
        worst = max(worst, float(np.max(np.abs(nxt.as_vector() - traj.state(i + 1).as_vector()))))
    return worst


def friction_violation(force, mu: float) -> float:
    """``||f_xy|| - mu f_z``; non-positive inside the cone."""
    f = np.asarray(force, dtype=float)
    return float(np.hypot(f[0], f[1]) - mu * f[2])


def reach_violation(foot_pos, com, max_reach: float) -> float:
    return float(np.linalg.norm(np.asarray(foot_pos) - np.asarray(com)) - max_reach)


def cop_violation(cop, half_extents) -> float:
    return float(np.max(np.abs(np.asarray(cop)) - np.asarray(half_extents)))


def check_constraints(traj: CentroidalTrajectory, model: RobotModel) -> dict:
    """Worst violation per constraint family, in native units (positive = violated)."""
    report = {"cop": -np.inf, "friction": -np.inf, "unilateral": -np.inf, "reach": -np.inf}
    for i in range(traj.horizon):
        c = traj.com[i + 1]
        for e in np.flatnonzero(traj.stance[i]):
            f = traj.forces[i, e]
            report["friction"] = max(report["friction"], friction_violation(f, model.friction_mu))
            report["unilateral"] = max(report["unilateral"], float(-f[2]))
            report["reach"] = max(report["reach"], reach_violation(traj.feet[i, e], c, model.max_leg_reach))
            report["cop"] = max(report["cop"], cop_violation(traj.cops[i, e], model.cop_half_extents))
    return {k: (float(v) if np.isfinite(v) else 0.0) for k, v in report.items()}
