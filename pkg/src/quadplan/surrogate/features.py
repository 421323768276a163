"""Network inputs and targets, expressed in the current motion-pattern frame."""

from __future__ import annotations

import numpy as np

from quadplan import so3
from quadplan.gait import MotionDescription, to_local_point, to_local_vector, to_world_point, to_world_vector
from quadplan.model import N_LEGS, WholeBodyState

HISTORY = 10
STATE_DIM = 36
WINDOW_HALF = 50
WINDOW = 2 * WINDOW_HALF + 1
CONTACT_DIM = 4
LAST_FLAG = 10.0
N_FEATURES = HISTORY * STATE_DIM + WINDOW * N_LEGS * CONTACT_DIM + 1
N_TARGETS = 15
TARGET_GROUPS = (("com", slice(0, 3)), ("lin_momentum", slice(3, 6)),
                 ("ang_momentum", slice(6, 9)), ("wrench", slice(9, 15)))
HISTORY_SLICE = slice(0, HISTORY * STATE_DIM)


def layout() -> dict:
    """Descriptor stored next to trained weights so encoder and net agree."""
    return {"history": HISTORY, "state_dim": STATE_DIM, "window": WINDOW,
            "contact_dim": CONTACT_DIM, "last_flag": LAST_FLAG, "n_features": N_FEATURES,
            "n_targets": N_TARGETS, "frame": "pattern", "orientation": "rpy"}


def history_noise_scale() -> np.ndarray:
    """Per-entry mask of the history block: 0 for positions, 1 for velocities."""
    mask = np.zeros(HISTORY * STATE_DIM)
    for h in range(HISTORY):
        mask[h * STATE_DIM + 18:(h + 1) * STATE_DIM] = 1.0
    return mask


def _local_state(frame, q: WholeBodyState) -> np.ndarray:
    yaw_inv = so3.yaw_quat(-frame[2])
    out = np.empty(STATE_DIM)
    out[0:3] = to_local_point(frame, q.base_pos)
    out[3:6] = so3.to_rpy(so3.mul(yaw_inv, q.base_quat))
    out[6:18] = q.joint_pos
    out[18:21] = to_local_vector(frame, q.base_lin_vel)
    out[21:24] = to_local_vector(frame, q.base_ang_vel)
    out[24:36] = q.joint_vel
    return out


def encode_features(history, desc: MotionDescription, t: int) -> np.ndarray:
    """Feature vector at step ``t``.

    ``history`` lists whole-body states, newest last; only the last ten are
    used and missing ones repeat the oldest available.  The contact window
    covers steps ``t-50 .. t+50`` clamped to the plan.
    """
    if not 0 <= t <= desc.horizon:
        raise ValueError(f"step {t} outside description (0..{desc.horizon})")
    if len(history) == 0:
        raise ValueError("history is empty")
    frame = desc.pattern_at_step(t).frame
    x = np.empty(N_FEATURES)
    hist = list(history[-HISTORY:])
    hist = [hist[0]] * (HISTORY - len(hist)) + hist
    for h, q in enumerate(hist):
        x[h * STATE_DIM:(h + 1) * STATE_DIM] = _local_state(frame, q)
    ks = np.clip(np.arange(t - WINDOW_HALF, t + WINDOW_HALF + 1), 0, desc.horizon)
    block = np.empty((WINDOW, N_LEGS, CONTACT_DIM))
    block[..., :3] = to_local_point(frame, desc.location_table()[ks])
    block[..., 3] = desc.touchdown_table()[ks]
    x[HISTORY_SLICE.stop:-1] = block.ravel()
    x[-1] = LAST_FLAG if desc.pattern_at_step(t).is_last else 0.0
    return x


def encode_targets(frame, com, lin, ang, wrench) -> np.ndarray:
    y = np.empty(N_TARGETS)
    y[0:3] = to_local_point(frame, com)
    y[3:6] = to_local_vector(frame, lin)
    y[6:9] = to_local_vector(frame, ang)
    y[9:12] = to_local_vector(frame, wrench[:3])
    y[12:15] = to_local_vector(frame, wrench[3:])
    return y


def decode_targets(frame, y):
    """Inverse of :func:`encode_targets`: world ``(com, lin, ang, wrench)``."""
    wrench = np.concatenate([to_world_vector(frame, y[9:12]), to_world_vector(frame, y[12:15])])
    return (to_world_point(frame, y[0:3]), to_world_vector(frame, y[3:6]),
            to_world_vector(frame, y[6:9]), wrench)


def trajectory_rows(desc: MotionDescription, traj, plan):
    """Training rows of one description: features from the IK roll-out of the
    optimizer plan, targets from the optimizer's next step."""
    n = desc.horizon
    wr = traj.wrenches()
    X = np.empty((n, N_FEATURES))
    Y = np.empty((n, N_TARGETS))
    states = [plan.state(k) for k in range(n + 1)]
    for t in range(n):
        X[t] = encode_features(states[max(0, t - HISTORY + 1):t + 1], desc, t)
        frame = desc.pattern_at_step(t).frame
        Y[t] = encode_targets(frame, traj.com[t + 1], traj.lin_momentum[t + 1],
                              traj.ang_momentum[t + 1], wr[t])
    return X, Y
