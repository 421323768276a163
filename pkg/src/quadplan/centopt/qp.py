"""Convex QP solver based on operator splitting (ADMM).

Solves::

    minimize    1/2 x'Px + q'x
    subject to  A_eq x = b_eq
                l_in <= A_in x <= u_in

The iteration follows the OSQP splitting: one quasi-definite KKT
factorization, relaxed ADMM steps, Ruiz equilibration, adaptive penalty and
an active-set polish that brings the residuals down to solver precision.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

INF = np.inf
_DENSE_LIMIT = 160


class QPError(RuntimeError):
    pass


class QPInfeasibleError(QPError):
    """Raised when the iterates certify primal infeasibility."""


@dataclass
class QPResult:
    x: np.ndarray
    y_eq: np.ndarray
    y_in: np.ndarray
    prim_res: float
    dual_res: float
    status: str
    iterations: int
    polished: bool

    @property
    def duals(self):
        return self.y_eq, self.y_in

    @property
    def residuals(self):
        return self.prim_res, self.dual_res

    @property
    def converged(self) -> bool:
        return self.status == "solved"


class _Factor:
    def __init__(self, K):
        if isinstance(K, np.ndarray):
            self._lu = sla.lu_factor(K, check_finite=False)
            self._dense = True
        elif K.shape[0] <= _DENSE_LIMIT:
            self._lu = sla.lu_factor(K.toarray(), check_finite=False)
            self._dense = True
        else:
            self._lu = spla.splu(K.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                 options=dict(SymmetricMode=True))
            self._dense = False

    def solve(self, rhs):
        if self._dense:
            return sla.lu_solve(self._lu, rhs, check_finite=False)
        return self._lu.solve(rhs)


def _as_csc(M, shape):
    if M is None:
        return sp.csc_matrix(shape)
    return sp.csc_matrix(M)


def _inf_norm_cols(M):
    if M.shape[0] == 0:
        return np.zeros(M.shape[1])
    if isinstance(M, np.ndarray):
        return np.abs(M).max(axis=0)
    return np.asarray(abs(M).max(axis=0).todense()).ravel()


def _inf_norm_rows(M):
    if M.shape[1] == 0:
        return np.zeros(M.shape[0])
    if isinstance(M, np.ndarray):
        return np.abs(M).max(axis=1)
    return np.asarray(abs(M).max(axis=1).todense()).ravel()


class _Dense:
    """Matrix helpers for problems small enough that sparse overhead dominates."""

    @staticmethod
    def eye(k):
        return np.eye(k)

    @staticmethod
    def diags(v):
        return np.diag(v)

    @staticmethod
    def bmat(blocks):
        widths = [next(r[j].shape[1] for r in blocks if r[j] is not None) for j in range(len(blocks[0]))]
        heights = [next(b.shape[0] for b in r if b is not None) for r in blocks]
        return np.block([[np.zeros((heights[i], widths[j])) if b is None else b
                          for j, b in enumerate(r)] for i, r in enumerate(blocks)])

    @staticmethod
    def scale(M, left, right):
        return (left[:, None] * M) * right[None, :]


class _Sparse:
    @staticmethod
    def eye(k):
        return sp.eye(k)

    @staticmethod
    def diags(v):
        return sp.diags(v)

    @staticmethod
    def bmat(blocks):
        return sp.bmat(blocks, format="csc")

    @staticmethod
    def scale(M, left, right):
        return sp.csc_matrix(sp.diags(left) @ M @ sp.diags(right))


def _ruiz(P, q, A, iters, be):
    n, m = P.shape[0], A.shape[0]
    D = np.ones(n)
    E = np.ones(m)
    Ps, As = P, A
    for _ in range(iters):
        col = np.maximum(_inf_norm_cols(Ps), _inf_norm_cols(As))
        row = _inf_norm_rows(As)
        col = np.where(col < 1e-4, 1.0, col)
        row = np.where(row < 1e-4, 1.0, row)
        dd = 1.0 / np.sqrt(col)
        ee = 1.0 / np.sqrt(row)
        Ps = be.scale(Ps, dd, dd)
        As = be.scale(As, ee, dd)
        D *= dd
        E *= ee
    pn = _inf_norm_cols(Ps)
    scale = max(pn.mean() if n else 0.0, np.max(np.abs(D * q), initial=0.0))
    c = 1.0 / scale if scale > 1e-4 else 1.0
    c = min(c, 1e4)
    return Ps * c, c * D * q, As, D, E, c


def qp_solve(P, q, A_eq=None, b_eq=None, A_in=None, l_in=None, u_in=None, tol=1e-6,
             max_iter=50000, rho=0.1, sigma=1e-6, alpha=1.6, polish=True, scaling=10,
             x0=None, y0=None, admm_tol=1e-3, check_every=10, polish_rounds=10) -> QPResult:
    """Solve a convex QP to absolute primal/dual residuals ``<= tol``.

    Raises QPInfeasibleError on a primal infeasibility certificate; an
    iteration cap is reported through ``status == "max_iter"``.
    """
    q = np.asarray(q, dtype=float)
    n = q.size
    if A_eq is not None and not sp.issparse(A_eq):
        A_eq = np.asarray(A_eq, dtype=float).reshape(-1, n)
    if A_in is not None and not sp.issparse(A_in):
        A_in = np.asarray(A_in, dtype=float).reshape(-1, n)
    m_eq = 0 if A_eq is None else A_eq.shape[0]
    m_in = 0 if A_in is None else A_in.shape[0]
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()
    l_in = np.full(m_in, -INF) if l_in is None else np.asarray(l_in, dtype=float).ravel()
    u_in = np.full(m_in, INF) if u_in is None else np.asarray(u_in, dtype=float).ravel()
    if np.any(l_in > u_in):
        i = int(np.argmax(l_in > u_in))
        raise QPInfeasibleError(f"inequality row {i} has lower bound above upper bound")
    lo = np.concatenate([b_eq, l_in])
    hi = np.concatenate([b_eq, u_in])
    m = lo.size
    if n + m <= _DENSE_LIMIT:
        be = _Dense

        def dense(M, shape):
            if M is None:
                return np.zeros(shape)
            return M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float).reshape(shape)
        P = dense(P, (n, n))
        P = 0.5 * (P + P.T)
        A = np.vstack([dense(A_eq, (m_eq, n)), dense(A_in, (m_in, n))])
    else:
        be = _Sparse
        P = sp.csc_matrix(P) if P is not None else sp.csc_matrix((n, n))
        P = sp.csc_matrix(0.5 * (P + P.T))
        A = sp.csc_matrix(sp.vstack([_as_csc(A_eq, (0, n)), _as_csc(A_in, (0, n))]))

    Ps, qs, As, D, E, c = _ruiz(P, q, A, scaling, be)
    los = np.where(np.isfinite(lo), lo * E, -INF)
    his = np.where(np.isfinite(hi), hi * E, INF)

    is_eq = (lo == hi)
    free = ~np.isfinite(lo) & ~np.isfinite(hi)

    def rho_vec(r):
        v = np.full(m, r)
        v[is_eq] = 1e3 * r
        v[free] = 1e-6
        return v

    def factor(rv):
        K = be.bmat([[Ps + sigma * be.eye(n), As.T], [As, be.diags(-1.0 / rv)]])
        return _Factor(K)

    rv = rho_vec(rho)
    fac = factor(rv)

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float) / D
    y = np.zeros(m) if y0 is None else np.asarray(y0, dtype=float) / E * c
    z = np.clip(As @ x, los, his)
    Dinv, Einv = 1.0 / D, 1.0 / E

    def residuals(xs, zs, ys):
        Ax = As @ xs
        Px = Ps @ xs
        Aty = As.T @ ys
        rp = np.max(np.abs(Einv * (Ax - zs)), initial=0.0)
        rd = np.max(np.abs(Dinv * (Px + qs + Aty)), initial=0.0) / c
        sp_ = max(np.max(np.abs(Einv * Ax), initial=0.0), np.max(np.abs(Einv * zs), initial=0.0))
        sd = max(np.max(np.abs(Dinv * Px), initial=0.0), np.max(np.abs(Dinv * Aty), initial=0.0),
                 np.max(np.abs(Dinv * qs), initial=0.0)) / c
        return rp, rd, sp_, sd

    def final(xs, ys, status, it, polished):
        xu = D * xs
        yu = E * ys / c
        Ax = A @ xu
        rp = np.max(np.abs(Ax - np.clip(Ax, lo, hi)), initial=0.0)
        rd = np.max(np.abs(P @ xu + q + A.T @ yu), initial=0.0)
        return QPResult(xu, yu[:m_eq], yu[m_eq:], float(rp), float(rd), status, it, polished)

    def try_polish(xs, zs, ys, rounds=polish_rounds):
        """Active-set refinement seeded by the ADMM iterate.

        Each round solves the equality-constrained QP on the guessed active
        set, then adds violated bounds and drops bounds whose multiplier has
        the wrong sign.
        """
        lower = ((zs - los < -ys) | is_eq) & np.isfinite(los)
        upper = ((his - zs < ys) & ~is_eq) & np.isfinite(his)
        slack_tol = tol * E
        delta = 1e-9
        for _r in range(rounds):
            idx = np.flatnonzero(lower | upper)
            nr = idx.size
            Ar = As[idx]
            br = np.where(lower[idx], los[idx], his[idx])
            if nr:
                K = be.bmat([[Ps, Ar.T], [Ar, None]])
                Kreg = be.bmat([[Ps + delta * be.eye(n), Ar.T], [Ar, -delta * be.eye(nr)]])
            else:
                K = Ps
                Kreg = Ps + delta * be.eye(n)
            rhs = np.concatenate([-qs, br])
            try:
                f = _Factor(Kreg)
                sol = f.solve(rhs)
                for _ in range(5):
                    sol = sol + f.solve(rhs - K @ sol)
            except (RuntimeError, ValueError, sla.LinAlgError):
                return None
            if not np.all(np.isfinite(sol)):
                return None
            xp = sol[:n]
            yp = np.zeros(m)
            yp[idx] = sol[n:]
            yu = E * yp / c
            Ax = As @ xp
            add_lo = ~lower & (Ax < los - slack_tol)
            add_hi = ~upper & (Ax > his + slack_tol)
            # multipliers must carry the sign of the bound they hold
            drop_lo = lower & ~is_eq & (yu > tol)
            drop_hi = upper & (yu < -tol)
            if not (add_lo.any() or add_hi.any() or drop_lo.any() or drop_hi.any()):
                log.debug("polish settled after %d rounds", _r + 1)
                return xp, yp
            log.debug("polish round %d: +%d -%d", _r, add_lo.sum() + add_hi.sum(), drop_lo.sum() + drop_hi.sum())
            lower = (lower | add_lo) & ~drop_lo
            upper = (upper | add_hi) & ~drop_hi
        return None

    if polish and x0 is not None and y0 is not None:
        pol = try_polish(x, z, y, rounds=4)
        if pol is not None:
            cand = final(pol[0], pol[1], "solved", 0, True)
            if cand.prim_res <= tol and cand.dual_res <= tol:
                return cand
            log.debug("warm polish residuals too large: rp %.2e rd %.2e", cand.prim_res, cand.dual_res)

    hi_fin, lo_fin = np.isfinite(his), np.isfinite(los)
    his_0, los_0 = np.where(hi_fin, his, 0.0), np.where(lo_fin, los, 0.0)
    it = 0
    prev_y = y.copy()
    eps = admm_tol
    rho_scalar = rho
    status = "max_iter"
    best = None
    while it < max_iter:
        it += 1
        rhs = np.concatenate([sigma * x - qs, z - y / rv])
        sol = fac.solve(rhs)
        xt, nu = sol[:n], sol[n:]
        zt = z + (nu - y) / rv
        x = alpha * xt + (1.0 - alpha) * x
        zh = alpha * zt + (1.0 - alpha) * z
        z = np.clip(zh + y / rv, los, his)
        prev_y = y
        y = y + rv * (zh - z)

        if it % check_every and it != 1:
            continue
        rp, rd, spn, sdn = residuals(x, z, y)
        dy = y - prev_y
        ndy = np.max(np.abs(E * dy), initial=0.0)
        if ndy > 1e-12 and m:
            Atdy = np.max(np.abs(Dinv * (As.T @ dy)), initial=0.0)
            pos = np.where(dy > 0, np.where(hi_fin, his_0 * dy, INF), 0.0)
            neg = np.where(dy < 0, np.where(lo_fin, los_0 * dy, INF), 0.0)
            support = pos.sum() + neg.sum()
            eps_inf = 1e-7
            if Atdy <= eps_inf * ndy and support < -eps_inf * ndy:
                bad = int(np.argmax(np.abs(dy)))
                raise QPInfeasibleError(f"primal infeasibility certificate (largest multiplier on row {bad})")
        if rp <= tol and rd <= tol:
            status = "solved"
            best = final(x, y, status, it, False)
            if polish:
                pol = try_polish(x, z, y)
                if pol is not None:
                    cand = final(pol[0], pol[1], status, it, True)
                    if cand.prim_res <= max(best.prim_res, tol) and cand.dual_res <= max(best.dual_res, tol):
                        best = cand
            return best
        if rp <= eps * (1.0 + spn) and rd <= eps * (1.0 + sdn):
            if polish:
                pol = try_polish(x, z, y)
                if pol is not None:
                    cand = final(pol[0], pol[1], "solved", it, True)
                    log.debug("polish at it %d: rp %.2e rd %.2e", it, cand.prim_res, cand.dual_res)
                    if cand.prim_res <= tol and cand.dual_res <= tol:
                        return cand
                else:
                    log.debug("polish at it %d rejected", it)
            eps *= 0.1
        # adaptive penalty
        if it % (5 * check_every) == 0:
            log.debug("it %d rp %.2e rd %.2e rho %.2e", it, rp, rd, rho_scalar)
            num = rp / max(spn, 1e-30)
            den = rd / max(sdn, 1e-30)
            if num > 0 and den > 0:
                new = rho_scalar * np.sqrt(num / den)
                new = min(max(new, 1e-6), 1e6)
                if new > 5.0 * rho_scalar or new < 0.2 * rho_scalar:
                    rho_scalar = new
                    rv = rho_vec(rho_scalar)
                    fac = factor(rv)
    res = final(x, y, status, it, False)
    if polish:
        pol = try_polish(x, z, y)
        if pol is not None:
            cand = final(pol[0], pol[1], status, it, True)
            if cand.prim_res <= tol and cand.dual_res <= tol:
                cand.status = "solved"
                return cand
    return res
