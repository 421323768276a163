"""Centroidal trajectory optimization by successive convexification.

The only nonconvex term is the contact moment ``(p - c) x f``.  Each outer
iteration freezes ``c`` at the previous iterate inside that product, which
leaves a QP in (c, l, k, f, contact moments).  A trust region on ``c`` keeps
the linearization honest and shrinks whenever the true objective of the
re-integrated trajectory goes up.

Flat-foot contacts are written in moment form: ``(m_x, m_y) = (z_y f_z, -z_x f_z)``
and ``m_z = z_x f_y - z_y f_x + tau``.  The CoP box then becomes the linear
pair ``|m_x| <= d_y f_z``, ``|m_y| <= d_x f_z`` and the problem stays a QP.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from quadplan.centopt.dynamics import (CentroidalState, CentroidalTrajectory, check_constraints,
                                       reintegrate)
from quadplan.centopt.qp import QPInfeasibleError, qp_solve
from quadplan.gait import MotionDescription
from quadplan.model import N_LEGS, RobotModel

log = logging.getLogger(__name__)

_REACH_SLACK_WEIGHT = 1e4


class CentroidalInfeasible(RuntimeError):
    pass


@dataclass
class OptSettings:
    w_com_via: float = 1e3
    w_lmom: float = 1e1
    w_amom: float = 1e2
    w_force: float = 1e-3
    w_force_rate: float = 1e-2
    w_terminal: float = 10.0
    max_outer: int = 30
    tolerance: float = 1e-7
    trust_radius: float = 0.05
    convergence_tol: float = 1e-4
    verbose: bool = False

    def __post_init__(self):
        for name in ("w_com_via", "w_lmom", "w_amom", "w_force", "w_force_rate", "w_terminal"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")
        if self.tolerance <= 0.0:
            raise ValueError("tolerance must be positive")


class _Layout:
    """Variable indexing of the transcribed problem."""

    def __init__(self, stance: np.ndarray, box_feet: bool):
        self.n = stance.shape[0]
        self.per_foot = 6 if box_feet else 3
        self.state = np.zeros(self.n, dtype=int)
        self.force = np.full((self.n, N_LEGS), -1, dtype=int)
        off = 0
        for i in range(self.n):
            self.state[i] = off
            off += 9
            for e in np.flatnonzero(stance[i]):
                self.force[i, e] = off
                off += self.per_foot
        self.n_core = off
        self.contacts = np.argwhere(self.force >= 0)  # (i, e) pairs in layout order
        self.slack = off + np.arange(len(self.contacts))
        self.nvar = off + len(self.contacts)


def initial_state(desc: MotionDescription, model: RobotModel) -> CentroidalState:
    if desc.com_via_points:
        c0 = np.asarray(desc.com_via_points[0][1], dtype=float)
    else:
        from quadplan.model import com_of, nominal_state
        c0 = com_of(model, nominal_state(model, *desc.start))[0]
    return CentroidalState(c0.copy(), np.zeros(3), np.zeros(3))


def _guess_com(desc: MotionDescription, c0: np.ndarray) -> np.ndarray:
    n = desc.horizon
    via = desc.via_point_steps()
    if not via:
        return np.tile(c0, (n + 1, 1))
    ks = np.array([k for k, _ in via], dtype=float)
    ps = np.array([p for _, p in via])
    grid = np.arange(n + 1, dtype=float)
    return np.stack([np.interp(grid, ks, ps[:, a]) for a in range(3)], axis=1)


class _Problem:
    def __init__(self, desc: MotionDescription, model: RobotModel, settings: OptSettings,
                 initial: CentroidalState):
        self.desc, self.model, self.s = desc, model, settings
        self.initial = initial
        self.dt = desc.dt
        self.n = desc.horizon
        self.stance = desc.stance_table()[:self.n].copy()
        self.feet = desc.location_table()[:self.n].copy()
        self.box = not model.point_feet
        self.lay = _Layout(self.stance, self.box)
        self.via = {}
        for k, p in desc.via_point_steps():
            if 1 <= k <= self.n:
                self.via[k] = p
        self._build_cost()

    def _build_cost(self):
        s, lay, m = self.s, self.lay, self.model
        rows, cols, vals = [], [], []
        q = np.zeros(lay.nvar)

        def quad(idx, w, target):
            rows.extend(idx)
            cols.extend(idx)
            vals.extend([2.0 * w] * len(idx))
            q[idx] += -2.0 * w * np.asarray(target)

        for i in range(self.n):
            t = i + 1
            o = lay.state[i]
            term = s.w_terminal if t == self.n else 1.0
            if t in self.via:
                quad(list(range(o, o + 3)), s.w_com_via * term, self.via[t])
            quad(list(range(o + 3, o + 6)), s.w_lmom * term, np.zeros(3))
            quad(list(range(o + 6, o + 9)), s.w_amom * term, np.zeros(3))
            active = np.flatnonzero(self.stance[i])
            f_nom = np.array([0.0, 0.0, m.mass * m.gravity / max(len(active), 1)])
            for e in active:
                fo = lay.force[i, e]
                quad(list(range(fo, fo + 3)), s.w_force, f_nom)
                if self.box:
                    quad(list(range(fo + 3, fo + 6)), s.w_force, np.zeros(3))
                if i > 0 and lay.force[i - 1, e] >= 0:
                    po = lay.force[i - 1, e]
                    w2 = 2.0 * s.w_force_rate
                    for a in range(lay.per_foot):
                        x, y = fo + a, po + a
                        rows.extend([x, y, x, y])
                        cols.extend([x, y, y, x])
                        vals.extend([w2, w2, -w2, -w2])
        q[lay.slack] = _REACH_SLACK_WEIGHT
        self.P = sp.csc_matrix((vals, (rows, cols)), shape=(lay.nvar, lay.nvar))
        self.q = q

    def objective(self, com, lin, ang, forces, moments) -> dict:
        """Cost breakdown of a trajectory given as state/input arrays."""
        s, m = self.s, self.model
        parts = {"com_via": 0.0, "lin_momentum": 0.0, "ang_momentum": 0.0, "force": 0.0, "force_rate": 0.0}
        for i in range(self.n):
            t = i + 1
            term = s.w_terminal if t == self.n else 1.0
            if t in self.via:
                parts["com_via"] += s.w_com_via * term * float(np.sum((com[t] - self.via[t]) ** 2))
            parts["lin_momentum"] += s.w_lmom * term * float(np.sum(lin[t] ** 2))
            parts["ang_momentum"] += s.w_amom * term * float(np.sum(ang[t] ** 2))
            active = np.flatnonzero(self.stance[i])
            f_nom = np.array([0.0, 0.0, m.mass * m.gravity / max(len(active), 1)])
            for e in active:
                parts["force"] += s.w_force * float(np.sum((forces[i, e] - f_nom) ** 2))
                if self.box:
                    parts["force"] += s.w_force * float(np.sum(moments[i, e] ** 2))
                if i > 0 and self.stance[i - 1, e]:
                    d = forces[i, e] - forces[i - 1, e]
                    parts["force_rate"] += s.w_force_rate * float(np.sum(d ** 2))
                    if self.box:
                        parts["force_rate"] += s.w_force_rate * float(np.sum((moments[i, e] - moments[i - 1, e]) ** 2))
        parts["total"] = sum(parts.values())
        return parts

    def build_constraints(self, c_bar: np.ndarray, radius: float):
        """Equality and inequality blocks linearized about ``c_bar`` (N+1, 3)."""
        lay, m, dt = self.lay, self.model, self.dt
        mu = m.friction_mu / math.sqrt(2.0)
        c0, l0, k0 = self.initial.com, self.initial.lin_momentum, self.initial.ang_momentum
        g = m.gravity_vec
        er, ec, ev = [], [], []
        b_eq = np.zeros(9 * self.n)
        for i in range(self.n):
            o = lay.state[i]
            r = 9 * i
            # momentum rows: l_t - l_{t-1} - dt sum f = m g dt
            for a in range(3):
                er += [r + a]
                ec += [o + 3 + a]
                ev += [1.0]
                if i > 0:
                    er += [r + a]
                    ec += [lay.state[i - 1] + 3 + a]
                    ev += [-1.0]
            b_eq[r:r + 3] = m.mass * g * dt + (l0 if i == 0 else 0.0)
            # com rows: c_t - c_{t-1} - dt/m l_t = 0
            for a in range(3):
                er += [r + 3 + a, r + 3 + a]
                ec += [o + a, o + 3 + a]
                ev += [1.0, -dt / m.mass]
                if i > 0:
                    er += [r + 3 + a]
                    ec += [lay.state[i - 1] + a]
                    ev += [-1.0]
            b_eq[r + 3:r + 6] = c0 if i == 0 else 0.0
            # angular rows: k_t - k_{t-1} - dt sum((p - c_bar) x f + gamma) = 0
            for a in range(3):
                er += [r + 6 + a]
                ec += [o + 6 + a]
                ev += [1.0]
                if i > 0:
                    er += [r + 6 + a]
                    ec += [lay.state[i - 1] + 6 + a]
                    ev += [-1.0]
            b_eq[r + 6:r + 9] = k0 if i == 0 else 0.0
            cb = c_bar[i + 1]
            for e in np.flatnonzero(self.stance[i]):
                fo = lay.force[i, e]
                for a in range(3):
                    er += [r + a]
                    ec += [fo + a]
                    ev += [-dt]
                rx, ry, rz = self.feet[i, e] - cb
                skew = ((0.0, -rz, ry), (rz, 0.0, -rx), (-ry, rx, 0.0))
                for a in range(3):
                    for bcol in range(3):
                        if skew[a][bcol] != 0.0:
                            er.append(r + 6 + a)
                            ec.append(fo + bcol)
                            ev.append(-dt * skew[a][bcol])
                if self.box:
                    for a in range(3):
                        er.append(r + 6 + a)
                        ec.append(fo + 3 + a)
                        ev.append(-dt)
        A_eq = sp.csc_matrix((ev, (er, ec)), shape=(9 * self.n, lay.nvar))

        ir, ic, iv = [], [], []
        lo, hi = [], []
        row = 0

        def add(entries, low, high):
            nonlocal row
            for col, val in entries:
                ir.append(row)
                ic.append(col)
                iv.append(val)
            lo.append(low)
            hi.append(high)
            row += 1

        dx, dy = m.cop_half_extents
        self.family_rows = {}
        for j, (i, e) in enumerate(lay.contacts):
            fo = lay.force[i, e]
            start = row
            add([(fo + 0, 1.0), (fo + 2, -mu)], -np.inf, 0.0)
            add([(fo + 0, -1.0), (fo + 2, -mu)], -np.inf, 0.0)
            add([(fo + 1, 1.0), (fo + 2, -mu)], -np.inf, 0.0)
            add([(fo + 1, -1.0), (fo + 2, -mu)], -np.inf, 0.0)
            add([(fo + 2, 1.0)], 0.0, np.inf)
            if self.box:
                add([(fo + 3, 1.0), (fo + 2, -dy)], -np.inf, 0.0)
                add([(fo + 3, -1.0), (fo + 2, -dy)], -np.inf, 0.0)
                add([(fo + 4, 1.0), (fo + 2, -dx)], -np.inf, 0.0)
                add([(fo + 4, -1.0), (fo + 2, -dx)], -np.inf, 0.0)
            # reach: nbar . (c_t - p) - s <= L_max, linearized at c_bar
            p = self.feet[i, e]
            d = c_bar[i + 1] - p
            nb = d / max(np.linalg.norm(d), 1e-9)
            o = lay.state[i]
            add([(o + a, nb[a]) for a in range(3)] + [(lay.slack[j], -1.0)],
                -np.inf, m.max_leg_reach + float(nb @ p))
            add([(lay.slack[j], 1.0)], 0.0, np.inf)
            self.family_rows[(i, e)] = (start, row)
        for i in range(self.n):
            o = lay.state[i]
            for a in range(3):
                if math.isfinite(radius):
                    add([(o + a, 1.0)], c_bar[i + 1, a] - radius, c_bar[i + 1, a] + radius)
                else:
                    add([(o + a, 1.0)], -np.inf, np.inf)
        A_in = sp.csc_matrix((iv, (ir, ic)), shape=(row, lay.nvar))
        return A_eq, b_eq, A_in, np.array(lo), np.array(hi)

    def unpack(self, x):
        lay = self.lay
        n = self.n
        com = np.zeros((n + 1, 3))
        lin = np.zeros((n + 1, 3))
        ang = np.zeros((n + 1, 3))
        com[0], lin[0], ang[0] = self.initial.com, self.initial.lin_momentum, self.initial.ang_momentum
        idx = lay.state
        for a in range(3):
            com[1:, a] = x[idx + a]
            lin[1:, a] = x[idx + 3 + a]
            ang[1:, a] = x[idx + 6 + a]
        forces = np.zeros((n, N_LEGS, 3))
        moments = np.zeros((n, N_LEGS, 3))
        for i, e in lay.contacts:
            fo = lay.force[i, e]
            forces[i, e] = x[fo:fo + 3]
            if self.box:
                moments[i, e] = x[fo + 3:fo + 6]
        slack = x[lay.slack]
        return com, lin, ang, forces, moments, slack

    def to_trajectory(self, forces, moments) -> CentroidalTrajectory:
        n = self.n
        cops = np.zeros((n, N_LEGS, 2))
        taus = np.zeros((n, N_LEGS))
        if self.box:
            fz = forces[..., 2]
            safe = np.where(fz > 1e-9, fz, 1.0)
            zx = np.where(fz > 1e-9, -moments[..., 1] / safe, 0.0)
            zy = np.where(fz > 1e-9, moments[..., 0] / safe, 0.0)
            # the moment form keeps |m| <= d f_z, clip only removes round-off
            zx = np.clip(zx, -self.model.cop_half_extents[0], self.model.cop_half_extents[0])
            zy = np.clip(zy, -self.model.cop_half_extents[1], self.model.cop_half_extents[1])
            cops[..., 0], cops[..., 1] = zx, zy
            taus = moments[..., 2] - (zx * forces[..., 1] - zy * forces[..., 0])
            taus = np.where(self.stance, taus, 0.0)
        traj = CentroidalTrajectory(
            com=None, lin_momentum=None, ang_momentum=None,
            forces=forces, cops=cops, yaw_torques=taus, stance=self.stance.copy(),
            feet=np.where(self.stance[..., None], self.feet, 0.0), dt=self.dt)
        return reintegrate(traj, self.model, self.initial)

    def moments_of(self, traj):
        mom = np.zeros((self.n, N_LEGS, 3))
        if self.box:
            f = traj.forces
            zx, zy = traj.cops[..., 0], traj.cops[..., 1]
            mom[..., 0] = zy * f[..., 2]
            mom[..., 1] = -zx * f[..., 2]
            mom[..., 2] = zx * f[..., 1] - zy * f[..., 0] + traj.yaw_torques
        return mom


def solve(description: MotionDescription, model: RobotModel, settings: OptSettings | None = None,
          initial: CentroidalState | None = None) -> CentroidalTrajectory:
    """Optimize the centroidal motion for ``description``.

    The returned trajectory is re-integrated from its contact inputs, so the
    step recursion holds to round-off.  ``converged`` is False (with a warning)
    when the outer loop hits ``max_outer`` before the CoM iterates settle.
    """
    settings = settings or OptSettings()
    t0 = time.perf_counter()
    initial = initial or initial_state(description, model)
    prob = _Problem(description, model, settings, initial)
    c_bar = _guess_com(description, initial.com)
    radius = math.inf
    best = None
    best_obj = math.inf
    history = []
    warm = None
    converged = False
    it = 0
    for it in range(1, settings.max_outer + 1):
        A_eq, b_eq, A_in, lo, hi = prob.build_constraints(c_bar, radius)
        try:
            res = qp_solve(prob.P, prob.q, A_eq, b_eq, A_in, lo, hi, tol=settings.tolerance,
                           rho=1.0, alpha=1.8,
                           x0=None if warm is None else warm[0],
                           y0=None if warm is None else warm[1])
        except QPInfeasibleError as exc:
            raise CentroidalInfeasible(f"centroidal QP infeasible at outer iteration {it}: {exc}") from exc
        com, lin, ang, forces, moments, slack = prob.unpack(res.x)
        if np.any(slack > 1e-7):
            j = int(np.argmax(slack))
            i, e = prob.lay.contacts[j]
            raise CentroidalInfeasible(
                f"reach constraint infeasible at timestep {i + 1} for effector {e} "
                f"(needs {slack[j]:.3e} m beyond max_leg_reach)")
        traj = prob.to_trajectory(forces, moments)
        obj = prob.objective(traj.com, traj.lin_momentum, traj.ang_momentum, traj.forces,
                             moments)["total"]
        step = float(np.max(np.abs(com - c_bar)))
        if settings.verbose:
            log.info("scvx it %d: objective %.6g, |c - c_bar| %.3e, radius %.3g, qp iters %d, status %s",
                     it, obj, step, radius, res.iterations, res.status)
        if obj <= best_obj + 1e-9 * max(1.0, abs(best_obj)) or best is None:
            best, best_obj = traj, obj
            history.append(obj)
            warm = (res.x, np.concatenate([res.y_eq, res.y_in]))
            if step <= settings.convergence_tol:
                converged = True
                break
            c_bar = com.copy()
            radius = settings.trust_radius if not math.isfinite(radius) else radius
        else:
            radius *= 0.5
            if radius < 1e-6:
                break
    if not converged:
        log.warning("centroidal solve stopped after %d outer iterations without converging", it)
    best.converged = converged
    best.iterations = it
    best.objective_history = history
    best.cost = prob.objective(best.com, best.lin_momentum, best.ang_momentum, best.forces,
                               prob.moments_of(best))
    best.solve_time = time.perf_counter() - t0
    return best


def constraint_report(traj: CentroidalTrajectory, model: RobotModel) -> dict:
    return check_constraints(traj, model)
