"""Desk-scale quadruped: mass properties, leg kinematics and CoM."""

from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

from quadplan import so3

EFFECTORS = ("FL", "FR", "HL", "HR")
N_LEGS = 4
NQ = 18  # base translation, base rotation, 12 joints
_FRONT = np.array([True, True, False, False])


@dataclass(frozen=True, eq=False)
class RobotModel:
    mass: float = 2.0
    gravity: float = 9.81
    hip_offsets: np.ndarray = field(default_factory=lambda: np.array(
        [[0.17, 0.10], [0.17, -0.10], [-0.17, 0.10], [-0.17, -0.10]]))
    upper_leg_len: float = 0.16
    lower_leg_len: float = 0.16
    nominal_height: float = 0.24
    friction_mu: float = 0.6
    max_leg_reach: float = 0.35
    cop_half_extents: np.ndarray = field(default_factory=lambda: np.zeros(2))
    base_inertia: np.ndarray = field(default_factory=lambda: np.diag([0.02, 0.04, 0.05]))
    # per leg: abduction motor (at the hip), upper-leg midpoint, lower-leg midpoint
    link_point_masses: np.ndarray = field(default_factory=lambda: np.tile([0.12, 0.10, 0.03], (4, 1)))
    joint_limits: np.ndarray = field(default_factory=lambda: np.tile(
        [[-0.8, 0.8], [-2.5, 2.5], [-2.9, 2.9]], (4, 1)))
    nominal_posture: np.ndarray | None = None

    def __post_init__(self):
        for name in ("hip_offsets", "cop_half_extents", "base_inertia",
                     "link_point_masses", "joint_limits"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float))
        if self.base_inertia.shape == (3,):
            object.__setattr__(self, "base_inertia", np.diag(self.base_inertia))
        if self.nominal_posture is None:
            object.__setattr__(self, "nominal_posture", standing_posture(self))
        else:
            object.__setattr__(self, "nominal_posture", np.array(self.nominal_posture, dtype=float))
        if self.mass <= 0.0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        if self.friction_mu <= 0.0:
            raise ValueError(f"friction_mu must be positive, got {self.friction_mu}")
        if np.any(self.cop_half_extents < 0.0):
            raise ValueError("cop_half_extents must be non-negative")
        if self.link_point_masses.shape != (4, 3):
            raise ValueError("link_point_masses must be 4x3")
        if self.base_mass <= 0.0:
            raise ValueError("link masses exceed total mass")

    @property
    def base_mass(self) -> float:
        return self.mass - float(self.link_point_masses.sum())

    @property
    def gravity_vec(self) -> np.ndarray:
        return np.array([0.0, 0.0, -self.gravity])

    @property
    def point_feet(self) -> bool:
        return bool(np.all(self.cop_half_extents == 0.0))

    def nominal_footholds(self) -> np.ndarray:
        """Foot positions (4x3) in the base ground frame at nominal posture."""
        p = np.zeros((4, 3))
        p[:, :2] = self.hip_offsets
        return p

    def digest(self) -> str:
        h = hashlib.sha256()
        for v in (self.mass, self.gravity, self.upper_leg_len, self.lower_leg_len,
                  self.nominal_height, self.friction_mu, self.max_leg_reach):
            h.update(np.float64(v).tobytes())
        for a in (self.hip_offsets, self.cop_half_extents, self.base_inertia,
                  self.link_point_masses, self.joint_limits, self.nominal_posture):
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()[:16]


def standing_posture(model: RobotModel) -> np.ndarray:
    """Joint angles putting each foot straight below its hip at nominal height.

    Front knees bend backwards and hind knees forwards, so the posture is
    mirror symmetric and the CoM sits above the base origin.
    """
    l1, l2, h = model.upper_leg_len, model.lower_leg_len, model.nominal_height
    cos_knee = (h * h - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    if not -1.0 <= cos_knee <= 1.0:
        raise ValueError(f"nominal_height {h} unreachable with legs {l1}+{l2}")
    knee = -math.acos(cos_knee)
    hip = math.atan2(-l2 * math.sin(knee), l1 + l2 * math.cos(knee))
    q = np.zeros(12)
    for i in range(N_LEGS):
        sign = 1.0 if _FRONT[i] else -1.0
        q[3 * i:3 * i + 3] = (0.0, sign * hip, sign * knee)
    return q


@dataclass(eq=False)
class WholeBodyState:
    base_pos: np.ndarray
    base_quat: np.ndarray
    joint_pos: np.ndarray
    base_lin_vel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    base_ang_vel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    joint_vel: np.ndarray = field(default_factory=lambda: np.zeros(12))

    def copy(self) -> "WholeBodyState":
        return WholeBodyState(self.base_pos.copy(), self.base_quat.copy(), self.joint_pos.copy(),
                              self.base_lin_vel.copy(), self.base_ang_vel.copy(),
                              self.joint_vel.copy())

    @property
    def velocity(self) -> np.ndarray:
        return np.concatenate([self.base_lin_vel, self.base_ang_vel, self.joint_vel])

    def with_velocity(self, v) -> "WholeBodyState":
        return replace(self, base_lin_vel=np.array(v[0:3]), base_ang_vel=np.array(v[3:6]),
                       joint_vel=np.array(v[6:18]))


def nominal_state(model: RobotModel, x=0.0, y=0.0, yaw=0.0) -> WholeBodyState:
    return WholeBodyState(
        base_pos=np.array([x, y, model.nominal_height]),
        base_quat=so3.yaw_quat(yaw),
        joint_pos=model.nominal_posture.copy(),
    )


def integrate(q: WholeBodyState, v, dt: float) -> WholeBodyState:
    """Explicit step of the generalized velocity; base rotation via exp map."""
    v = np.asarray(v, dtype=float)
    return WholeBodyState(
        base_pos=q.base_pos + dt * v[0:3],
        base_quat=so3.boxplus(q.base_quat, dt * v[3:6]),
        joint_pos=q.joint_pos + dt * v[6:18],
        base_lin_vel=v[0:3].copy(),
        base_ang_vel=v[3:6].copy(),
        joint_vel=v[6:18].copy(),
    )


def _planar_points(joints, a_len, b_len):
    """Points along each leg given lengths along the upper (a) and lower (b) link.

    Returns base-frame offsets from the hip (4x3) and their derivatives with
    respect to the leg's three joints (4x3x3).
    """
    q0, q1, q2 = joints[:, 0], joints[:, 1], joints[:, 2]
    s0, c0 = np.sin(q0), np.cos(q0)
    s1, c1 = np.sin(q1), np.cos(q1)
    s12, c12 = np.sin(q1 + q2), np.cos(q1 + q2)
    a = -a_len * s1 - b_len * s12
    b = -a_len * c1 - b_len * c12
    pts = np.stack([a, -b * s0, b * c0], axis=1)
    jac = np.zeros((joints.shape[0], 3, 3))
    jac[:, 1, 0] = -b * c0
    jac[:, 2, 0] = -b * s0
    da1, db1 = b, -a
    da2, db2 = -b_len * c12, b_len * s12
    jac[:, 0, 1] = da1
    jac[:, 1, 1] = -db1 * s0
    jac[:, 2, 1] = db1 * c0
    jac[:, 0, 2] = da2
    jac[:, 1, 2] = -db2 * s0
    jac[:, 2, 2] = db2 * c0
    return pts, jac


def _hips(model):
    h = np.zeros((4, 3))
    h[:, :2] = model.hip_offsets
    return h


def feet_base_frame(model: RobotModel, joint_pos):
    """Foot positions (4x3) and leg Jacobians (4x3x3), both in the base frame."""
    joints = np.asarray(joint_pos, dtype=float).reshape(4, 3)
    pts, jac = _planar_points(joints, model.upper_leg_len, model.lower_leg_len)
    return pts + _hips(model), jac


def forward_kinematics(model: RobotModel, q: WholeBodyState) -> np.ndarray:
    """World positions of the four feet (4x3)."""
    pb, _ = feet_base_frame(model, q.joint_pos)
    return q.base_pos + pb @ so3.to_matrix(q.base_quat).T


def feet_kinematics(model: RobotModel, q: WholeBodyState):
    """World foot positions (4x3) and the stacked 3x18 foot Jacobians (4x3x18)."""
    rot = so3.to_matrix(q.base_quat)
    pb, jb = feet_base_frame(model, q.joint_pos)
    rel = pb @ rot.T
    jac = np.zeros((4, 3, NQ))
    for i in range(N_LEGS):
        jac[i, :, 0:3] = np.eye(3)
        jac[i, :, 3:6] = -so3.skew(rel[i])
        jac[i, :, 6 + 3 * i:9 + 3 * i] = rot @ jb[i]
    return q.base_pos + rel, jac


def foot_jacobian(model: RobotModel, q: WholeBodyState, leg_index: int) -> np.ndarray:
    """3x18 map from generalized velocity to the linear velocity of one foot."""
    if leg_index not in range(N_LEGS):
        raise ValueError(f"leg_index must be in 0..3, got {leg_index}")
    return feet_kinematics(model, q)[1][leg_index]


def com_of(model: RobotModel, q: WholeBodyState):
    """Whole-body CoM and its 3x18 Jacobian."""
    joints = np.asarray(q.joint_pos, dtype=float).reshape(4, 3)
    hips = _hips(model)
    lm = model.link_point_masses
    upper, j_upper = _planar_points(joints, 0.5 * model.upper_leg_len, 0.0)
    lower, j_lower = _planar_points(joints, model.upper_leg_len, 0.5 * model.lower_leg_len)
    # base-frame first moment of the legs about the base origin
    moment = (lm[:, 0:1] * hips + lm[:, 1:2] * (hips + upper) + lm[:, 2:3] * (hips + lower)).sum(axis=0)
    r_bar = moment / model.mass
    rot = so3.to_matrix(q.base_quat)
    rel = rot @ r_bar
    jac = np.zeros((3, NQ))
    jac[:, 0:3] = np.eye(3)
    jac[:, 3:6] = -so3.skew(rel)
    for i in range(N_LEGS):
        jl = (lm[i, 1] * j_upper[i] + lm[i, 2] * j_lower[i]) / model.mass
        jac[:, 6 + 3 * i:9 + 3 * i] = rot @ jl
    return q.base_pos + rel, jac


def generalized_position(q: WholeBodyState) -> np.ndarray:
    """18-vector: base position, base roll-pitch-yaw, joint angles."""
    return np.concatenate([q.base_pos, so3.to_rpy(q.base_quat), q.joint_pos])


def world_inertia(model: RobotModel, quat) -> np.ndarray:
    rot = so3.to_matrix(quat)
    return rot @ model.base_inertia @ rot.T


_FLOAT_KEYS = ("mass", "gravity", "upper_leg_len", "lower_leg_len", "nominal_height",
               "friction_mu", "max_leg_reach")
_ARRAY_KEYS = {
    "hip_offsets": (4, 2),
    "cop_half_extents": (2,),
    "base_inertia": None,
    "link_point_masses": (4, 3),
    "joint_limits": (12, 2),
    "nominal_posture": (12,),
}


def _floats(text):
    return np.array([float(t) for t in text.replace(",", " ").split()])


def model_from_config(path_or_parser, section: str = "robot") -> RobotModel:
    """Build a RobotModel from the ``[robot]`` section of an INI-style file.

    Every key is optional; missing keys fall back to the desk defaults.
    Arrays are whitespace- or comma-separated floats in row-major order.
    """
    if isinstance(path_or_parser, configparser.ConfigParser):
        cp = path_or_parser
    else:
        cp = configparser.ConfigParser()
        with open(path_or_parser) as fh:
            cp.read_file(fh)
    if not cp.has_section(section):
        return RobotModel()
    sec = cp[section]
    kwargs = {}
    for key in sec:
        if key in _FLOAT_KEYS:
            kwargs[key] = float(sec[key])
        elif key in _ARRAY_KEYS:
            arr = _floats(sec[key])
            shape = _ARRAY_KEYS[key]
            if key == "base_inertia":
                shape = (3,) if arr.size == 3 else (3, 3)
            kwargs[key] = arr.reshape(shape)
        else:
            raise ValueError(f"unknown key '{key}' in [{section}]")
    return RobotModel(**kwargs)


def model_to_config(model: RobotModel, section: str = "robot") -> str:
    lines = [f"[{section}]"]
    for key in _FLOAT_KEYS:
        lines.append(f"{key} = {getattr(model, key)!r}")
    for key in _ARRAY_KEYS:
        arr = np.asarray(getattr(model, key)).ravel()
        lines.append(f"{key} = " + ", ".join(repr(float(v)) for v in arr))
    return "\n".join(lines) + "\n"
