import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadplan import gait
from quadplan.centopt import (CentroidalInfeasible, CentroidalState, OptSettings, QPInfeasibleError,
                              check_constraints, dynamics_residual, integrate_step, qp_solve, solve)
from quadplan.centopt.dynamics import friction_violation, reach_violation
from quadplan.model import RobotModel

from conftest import MANY

MODEL = RobotModel()
seeds = st.integers(0, 2 ** 32 - 1)


# ---------------------------------------------------------------- dynamics

def _scalar_step(c, l, k, forces, feet, cops, taus, m, g, dt):
    """Component-by-component re-implementation of the step recursion."""
    l = list(l)
    for i in range(3):
        l[i] += dt * (m * (-g if i == 2 else 0.0) + sum(f[i] for f in forces))
    c = [c[i] + dt / m * l[i] for i in range(3)]
    k = list(k)
    for f, p, z, tau in zip(forces, feet, cops, taus):
        r = [p[0] - c[0] + z[0], p[1] - c[1] + z[1], p[2] - c[2]]
        k[0] += dt * (r[1] * f[2] - r[2] * f[1])
        k[1] += dt * (r[2] * f[0] - r[0] * f[2])
        k[2] += dt * (r[0] * f[1] - r[1] * f[0] + tau)
    return c, l, k


@settings(max_examples=200)
@given(seeds)
def test_integrate_step_matches_scalar_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(0, 5))
    prev = CentroidalState(rng.normal(size=3), rng.normal(size=3), rng.normal(size=3))
    forces, feet = rng.normal(size=(n, 3)) * 5, rng.normal(size=(n, 3))
    cops, taus = rng.normal(size=(n, 2)) * 0.01, rng.normal(size=n) * 0.1
    out = integrate_step(prev, forces, feet, MODEL, 0.01, cops=cops, yaw_torques=taus)
    c, l, k = _scalar_step(prev.com, prev.lin_momentum, prev.ang_momentum, forces, feet, cops, taus,
                           MODEL.mass, MODEL.gravity, 0.01)
    assert np.allclose(out.com, c, atol=1e-12, rtol=0)
    assert np.allclose(out.lin_momentum, l, atol=1e-12, rtol=0)
    assert np.allclose(out.ang_momentum, k, atol=1e-12, rtol=0)


def test_free_fall_step():
    out = integrate_step(CentroidalState(np.array([0, 0, 1.0])), np.zeros((0, 3)), np.zeros((0, 3)), MODEL, 0.01)
    assert np.allclose(out.lin_momentum, [0, 0, -MODEL.mass * MODEL.gravity * 0.01])
    assert out.com[2] == pytest.approx(1.0 - MODEL.gravity * 0.01 ** 2)


def test_symmetric_equilibrium_is_fixed_point():
    c = np.array([0.0, 0.0, 0.25])
    feet = np.array([[0.2, 0.1, 0], [0.2, -0.1, 0], [-0.2, 0.1, 0], [-0.2, -0.1, 0]])
    f = np.tile([0, 0, MODEL.mass * MODEL.gravity / 4], (4, 1))
    out = integrate_step(CentroidalState(c), f, feet, MODEL, 0.01)
    assert np.allclose(out.com, c, atol=1e-15) and np.allclose(out.lin_momentum, 0, atol=1e-15)
    assert np.allclose(out.ang_momentum, 0, atol=1e-15)


def test_integrate_step_rejects_bad_dt():
    with pytest.raises(ValueError):
        integrate_step(CentroidalState(np.zeros(3)), [], [], MODEL, 0.0)


@settings(max_examples=MANY)
@given(seeds)
def test_flight_conserves_angular_momentum(seed):
    rng = np.random.default_rng(seed)
    st_ = CentroidalState(rng.normal(size=3), rng.normal(size=3) * 3, rng.normal(size=3))
    k0, l0 = st_.ang_momentum.copy(), st_.lin_momentum.copy()
    steps = int(rng.integers(1, 60))
    for _ in range(steps):
        st_ = integrate_step(st_, np.zeros((0, 3)), np.zeros((0, 3)), MODEL, 0.01)
    assert np.linalg.norm(st_.ang_momentum - k0) <= 1e-9
    expected_lz = l0[2] - MODEL.mass * MODEL.gravity * 0.01 * steps
    assert abs(st_.lin_momentum[2] - expected_lz) <= 1e-9 * max(1.0, steps)


def test_constraint_examples():
    assert friction_violation([0, 0, 10], 0.6) == pytest.approx(-6.0)
    assert friction_violation([1, 0, 1], 0.6) == pytest.approx(0.4)
    assert reach_violation([0, 0, 0], [0, 0, 0.24], 0.35) == pytest.approx(-0.11)


# ---------------------------------------------------------------- QP

def test_qp_projection_and_box():
    r = qp_solve(2 * np.eye(4), np.zeros(4), np.array([[1.0, 0, 0, 0]]), [1.0], tol=1e-9)
    assert np.allclose(r.x, [1, 0, 0, 0], atol=1e-8)
    a = np.array([-0.5, 0.3, 2.0, 1.0])
    r = qp_solve(2 * np.eye(4), -2 * a, A_in=np.eye(4), l_in=np.zeros(4), u_in=np.ones(4), tol=1e-9)
    assert np.allclose(r.x, np.clip(a, 0, 1), atol=1e-8)


def _random_eq_qp(rng):
    n, m = int(rng.integers(3, 30)), 0
    m = int(rng.integers(1, n))
    M = rng.normal(size=(n, n))
    P = M @ M.T + 0.1 * np.eye(n)
    return P, rng.normal(size=n), rng.normal(size=(m, n)), rng.normal(size=m)


@settings(max_examples=100)
@given(seeds)
def test_qp_matches_direct_kkt_solve(seed):
    P, q, A, b = _random_eq_qp(np.random.default_rng(seed))
    n, m = q.size, b.size
    K = np.block([[P, A.T], [A, np.zeros((m, m))]])
    sol = np.linalg.solve(K, np.concatenate([-q, b]))
    r = qp_solve(P, q, A, b, tol=1e-9)
    assert r.converged
    assert np.max(np.abs(r.x - sol[:n])) <= 1e-6
    assert np.max(np.abs(r.y_eq - sol[n:])) <= 1e-6 * max(1.0, np.abs(sol[n:]).max())


@settings(max_examples=100)
@given(seeds)
def test_qp_inequality_kkt_conditions(seed):
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(2, 25)), int(rng.integers(1, 30))
    M = rng.normal(size=(n, n))
    P = M @ M.T + 1e-2 * np.eye(n)
    q = rng.normal(size=n)
    A = rng.normal(size=(m, n))
    x_feas = rng.normal(size=n)
    lo = A @ x_feas - rng.uniform(0, 1, m)
    hi = A @ x_feas + rng.uniform(0, 1, m)
    lo[rng.random(m) < 0.3] = -np.inf
    r = qp_solve(P, q, A_in=A, l_in=lo, u_in=hi, tol=1e-9)
    assert r.converged
    x, y = r.x, r.y_in
    # stationarity, feasibility, complementarity: an independent KKT check
    assert np.max(np.abs(P @ x + q + A.T @ y)) <= 1e-6
    ax = A @ x
    assert np.all(ax >= lo - 1e-6) and np.all(ax <= hi + 1e-6)
    assert np.all(np.where(y > 1e-6, np.abs(ax - hi), 0) <= 1e-6)
    assert np.all(np.where(y < -1e-6, np.abs(ax - lo), 0) <= 1e-6)
    # and the optimum agrees with the KKT system of the detected active set
    act = np.flatnonzero(np.abs(y) > 1e-7)
    Aa = A[act]
    ba = np.where(y[act] > 0, hi[act], lo[act])
    K = np.block([[P, Aa.T], [Aa, np.zeros((act.size, act.size))]])
    sol = np.linalg.lstsq(K, np.concatenate([-q, ba]), rcond=None)[0]
    assert np.max(np.abs(sol[:n] - x)) <= 1e-6


def test_qp_detects_infeasibility():
    A = np.array([[1.0, 0.0], [1.0, 0.0]])
    with pytest.raises(QPInfeasibleError):
        qp_solve(np.eye(2), np.zeros(2), A_in=A, l_in=[1.0, -np.inf], u_in=[np.inf, 0.0])
    with pytest.raises(QPInfeasibleError, match="row 0"):
        qp_solve(np.eye(2), np.zeros(2), A_in=np.eye(2), l_in=[1.0, 0.0], u_in=[0.0, 1.0])


def test_qp_iteration_cap_reported():
    P, q, A, b = _random_eq_qp(np.random.default_rng(0))
    r = qp_solve(P, q, A, b, tol=1e-12, max_iter=3, polish=False)
    assert r.status == "max_iter" and not r.converged


def test_qp_is_deterministic():
    P, q, A, b = _random_eq_qp(np.random.default_rng(4))
    a, b_ = qp_solve(P, q, A, b), qp_solve(P, q, A, b)
    assert np.array_equal(a.x, b_.x)


def test_qp_sparse_and_dense_paths_agree():
    import scipy.sparse as sp
    rng = np.random.default_rng(9)
    n = 120
    P = sp.diags(rng.uniform(1, 2, n)).tocsc()
    q = rng.normal(size=n)
    A = sp.random(60, n, density=0.05, random_state=1, format="csc")
    small = qp_solve(P.toarray()[:20, :20], q[:20], A_in=np.eye(20), l_in=-np.ones(20), u_in=np.ones(20))
    assert small.converged
    big = qp_solve(P, q, A_in=A, l_in=-np.ones(60), u_in=np.ones(60), tol=1e-9)
    dense = qp_solve(P.toarray(), q, A_in=A.toarray(), l_in=-np.ones(60), u_in=np.ones(60), tol=1e-9)
    assert np.allclose(big.x, dense.x, atol=1e-6)


# ---------------------------------------------------------------- solver

def test_standing_forces_balance_gravity(standing):
    desc, traj = standing
    assert traj.converged
    total = traj.forces.sum(axis=1)
    assert np.max(np.abs(total - [0, 0, MODEL.mass * MODEL.gravity])) <= 1e-6
    assert np.max(np.abs(traj.lin_momentum)) <= 1e-6 and np.max(np.abs(traj.ang_momentum)) <= 1e-6


@pytest.mark.parametrize("fixture", ["standing", "walk", "jump"])
def test_solutions_are_feasible_and_exact(fixture, request):
    desc, traj = request.getfixturevalue(fixture)[:2]
    assert traj.converged
    assert dynamics_residual(traj, MODEL) <= 1e-8
    assert all(v <= 1e-6 for v in check_constraints(traj, MODEL).values())
    assert traj.solve_time <= 60.0
    hist = traj.objective_history
    assert all(b <= a * (1 + 1e-9) for a, b in zip(hist, hist[1:]))


def test_jump_flight_is_ballistic(jump):
    desc, traj = jump
    flight = np.flatnonzero(~traj.stance.any(axis=1))
    assert flight.size > 0
    t0 = flight[0]
    assert np.allclose(traj.forces[flight], 0.0)
    for t in flight:
        expected = traj.lin_momentum[t0, 2] - MODEL.mass * MODEL.gravity * traj.dt * (t + 1 - t0)
        assert traj.lin_momentum[t + 1, 2] == pytest.approx(expected, abs=1e-9)
        assert np.linalg.norm(traj.ang_momentum[t + 1] - traj.ang_momentum[t0]) <= 1e-9


def test_reach_infeasibility_is_reported():
    model = RobotModel(max_leg_reach=0.2)
    desc = gait.gen_standing(model, duration=0.3)
    with pytest.raises(CentroidalInfeasible, match="timestep"):
        solve(desc, model)


def test_settings_validated():
    with pytest.raises(ValueError):
        OptSettings(w_force=-1.0)
    with pytest.raises(ValueError):
        OptSettings(tolerance=0.0)


def test_outer_iteration_cap_flags_result(caplog):
    desc = gait.gen_static_walk(MODEL, 1, [[0.06, 0.02]])
    traj = solve(desc, MODEL, OptSettings(max_outer=1))
    assert not traj.converged and traj.iterations == 1
    assert "without converging" in caplog.text
    assert math.isfinite(traj.cost["total"])
