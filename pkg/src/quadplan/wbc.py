"""Whole-body controller: wrench PD, slack-regularized force allocation,
Jacobian-transpose impedance torques."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields

import numpy as np

from quadplan import so3
from quadplan.centopt.qp import qp_solve


def _diag3(v):
    return field(default_factory=lambda: np.full(3, float(v)))


@dataclass
class WbcGains:
    K_c: np.ndarray = _diag3(50.0)
    D_c: np.ndarray = _diag3(5.0)
    K_b: np.ndarray = _diag3(25.0)
    D_b: np.ndarray = _diag3(2.5)
    K_imp: np.ndarray = _diag3(50.0)
    D_imp: np.ndarray = _diag3(0.5)
    alpha: float = 1e4
    # scales sum |F|^2; the slack left on a feasible wrench is about force_weight / alpha times |F|
    force_weight: float = 1e-6
    mu: float = 0.6

    def __post_init__(self):
        for f in ("K_c", "D_c", "K_b", "D_b", "K_imp", "D_imp"):
            v = np.asarray(getattr(self, f), dtype=float)
            v = np.full(3, float(v)) if v.ndim == 0 else v.reshape(3)
            if np.any(v < 0):
                raise ValueError(f"gain {f} must be non-negative")
            setattr(self, f, v)
        if self.alpha <= 0 or self.force_weight <= 0 or self.mu <= 0:
            raise ValueError("alpha, force_weight and mu must be positive")


def gains_from_config(path_or_parser, section: str = "wbc") -> WbcGains:
    """Read ``[wbc]``; vector gains take one value (isotropic) or three."""
    if isinstance(path_or_parser, configparser.ConfigParser):
        cp = path_or_parser
    else:
        cp = configparser.ConfigParser()
        with open(path_or_parser) as fh:
            cp.read_file(fh)
    if not cp.has_section(section):
        return WbcGains()
    names = {f.name.lower(): f.name for f in fields(WbcGains)}
    kwargs = {}
    for key, raw in cp[section].items():
        if key not in names:
            raise ValueError(f"unknown key '{key}' in [{section}]")
        vals = [float(t) for t in raw.replace(",", " ").split()]
        kwargs[names[key]] = vals[0] if len(vals) == 1 else np.array(vals)
    return WbcGains(**kwargs)


@dataclass
class Wrench:
    force: np.ndarray
    moment: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.force, self.moment])

    @classmethod
    def from_vector(cls, w) -> "Wrench":
        w = np.asarray(w, dtype=float)
        return cls(w[:3].copy(), w[3:6].copy())


@dataclass
class CentroidalSnapshot:
    """Reference or measured centroidal quantities and base orientation."""
    com: np.ndarray
    lin_momentum: np.ndarray
    ang_momentum: np.ndarray
    base_quat: np.ndarray
    wrench: np.ndarray = field(default_factory=lambda: np.zeros(6))


def compute_wrench(ref: CentroidalSnapshot, meas: CentroidalSnapshot, gains: WbcGains,
                   mass: float = 1.0, inertia=None) -> Wrench:
    """Feed-forward wrench plus PD on CoM, momenta and base orientation.

    The damping gains act on velocities, so momentum errors are divided by
    ``mass`` and by ``inertia`` (3x3, world frame).  With the defaults
    (unit mass, identity inertia) the momentum errors enter directly.
    """
    w = np.asarray(ref.wrench, dtype=float)
    dk = np.asarray(ref.ang_momentum) - meas.ang_momentum
    if inertia is not None:
        dk = np.linalg.solve(inertia, dk)
    force = (w[:3] + gains.K_c * (ref.com - meas.com)
             + gains.D_c * (np.asarray(ref.lin_momentum) - meas.lin_momentum) / mass)
    moment = w[3:] + gains.K_b * so3.boxminus(ref.base_quat, meas.base_quat) + gains.D_b * dk
    return Wrench(force, moment)


class AllocationError(RuntimeError):
    pass


@dataclass
class Allocation:
    forces: np.ndarray   # (k, 3)
    eta: np.ndarray      # (6,)
    zeta: np.ndarray     # (2,)
    status: str

    @property
    def slack_norm(self) -> float:
        return float(np.linalg.norm(np.concatenate([self.eta, self.zeta])))


def allocate_forces(wrench, feet_rel, gains: WbcGains | None = None, tol: float = 1e-9) -> Allocation:
    """Distribute ``wrench`` over stance feet at ``feet_rel`` (k, 3) relative to the CoM.

    Minimizes ``w_F sum|F_i|^2 + alpha(|eta|^2 + zeta1^2 + zeta2^2)`` with the
    wrench matched up to ``eta`` and four tangential friction rows per foot
    relaxed by the shared ``zeta``.
    """
    g = gains or WbcGains()
    W = wrench.as_vector() if isinstance(wrench, Wrench) else np.asarray(wrench, dtype=float)
    feet = np.asarray(feet_rel, dtype=float).reshape(-1, 3)
    k = feet.shape[0]
    nf = 3 * k
    n = nf + 8
    P = np.zeros((n, n))
    P[np.arange(nf), np.arange(nf)] = 2.0 * g.force_weight
    P[np.arange(nf, n), np.arange(nf, n)] = 2.0 * g.alpha
    A_eq = np.zeros((6, n))
    for i in range(k):
        A_eq[0:3, 3 * i:3 * i + 3] = np.eye(3)
        A_eq[3:6, 3 * i:3 * i + 3] = so3.skew(feet[i])
    A_eq[:, nf:nf + 6] = np.eye(6)
    A_in = np.zeros((5 * k, n))
    lo = np.full(5 * k, -np.inf)
    hi = np.zeros(5 * k)
    mu = g.mu
    for i in range(k):
        r = 5 * i
        fx, fy, fz = 3 * i, 3 * i + 1, 3 * i + 2
        for j, (col, zeta) in enumerate(((fx, 0), (fy, 1))):
            for sgn in (1.0, -1.0):
                row = r + 2 * j + (0 if sgn > 0 else 1)
                A_in[row, col] = sgn
                A_in[row, fz] = -mu
                A_in[row, nf + 6 + zeta] = -1.0
        A_in[r + 4, fz] = 1.0
        lo[r + 4], hi[r + 4] = 0.0, np.inf
    if k == 0:
        A_in = np.zeros((0, n))
        lo = hi = np.zeros(0)
    y0 = np.zeros(6 + A_in.shape[0])
    res = qp_solve(P, np.zeros(n), A_eq, W, A_in, lo, hi, tol=tol, x0=np.zeros(n), y0=y0)
    scale = float(np.abs(W).max(initial=0.0))
    x = res.x
    if not res.converged and scale > 1.0:
        # the solution is positively homogeneous in W; retry on the unit-scale wrench
        res = qp_solve(P, np.zeros(n), A_eq, W / scale, A_in, lo, hi, tol=tol, x0=np.zeros(n), y0=y0)
        x = res.x * scale
    if not res.converged:
        raise AllocationError(f"force allocation QP failed: {res.status}")
    forces = x[:nf].reshape(k, 3)
    forces[:, 2] = np.maximum(forces[:, 2], 0.0)
    return Allocation(forces, x[nf:nf + 6].copy(), x[nf + 6:].copy(), res.status)


def leg_impedance_torque(J, force, ref_pos, ref_vel, meas_pos, meas_vel, gains: WbcGains | None = None,
                         leg: int | None = None) -> np.ndarray:
    """``J^T (F + K (p_ref - p) + D (v_ref - v))`` for one leg's three joints.

    ``J`` is the 3x3 leg block, or the full 3x18 foot Jacobian with ``leg``.
    """
    g = gains or WbcGains()
    J = np.asarray(J, dtype=float)
    if J.shape == (3, 18):
        if leg is None:
            raise ValueError("leg index required with a 3x18 Jacobian")
        J = J[:, 6 + 3 * leg:9 + 3 * leg]
    cart = (np.asarray(force, dtype=float) + g.K_imp * (np.asarray(ref_pos) - meas_pos)
            + g.D_imp * (np.asarray(ref_vel) - meas_vel))
    return J.T @ cart
