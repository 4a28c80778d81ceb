"""Dense convex QP solver based on operator splitting (ADMM).

Solves::

    minimize    0.5 x'Hx + g'x
    subject to  lb <= x <= ub
                C x >= c_lower

The iteration is the OSQP splitting applied to the stacked constraint matrix
``A = [I; C]`` with an adaptive penalty. Every few iterations the solver
guesses the active set from the dual iterate and solves the reduced KKT
system ("polishing"); accepted polished points are exact up to round-off.
A :class:`QPSolver` keeps the last primal/dual pair for warm starts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.optimize import nnls

from .errors import ConfigurationError

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"

_INF = np.inf


@dataclass
class QPProblem:
    """Problem data; ``C``/``c_lower`` may be omitted when there are no inequalities."""

    H: np.ndarray
    g: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    C: np.ndarray | None = None
    c_lower: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.ascontiguousarray(self.H, dtype=float)
        self.g = np.ascontiguousarray(self.g, dtype=float)
        n = self.g.shape[0]
        self.lb = np.ascontiguousarray(self.lb, dtype=float)
        self.ub = np.ascontiguousarray(self.ub, dtype=float)
        if self.C is None:
            self.C = np.zeros((0, n))
            self.c_lower = np.zeros(0)
        self.C = np.ascontiguousarray(np.atleast_2d(self.C), dtype=float).reshape(-1, n)
        self.c_lower = np.ascontiguousarray(self.c_lower, dtype=float).reshape(-1)
        if self.H.shape != (n, n):
            raise ConfigurationError(f"H has shape {self.H.shape}, expected {(n, n)}")
        if self.lb.shape != (n,) or self.ub.shape != (n,):
            raise ConfigurationError("bound vectors do not match the variable count")
        if self.C.shape[0] != self.c_lower.shape[0]:
            raise ConfigurationError("C and c_lower disagree on the number of inequalities")
        if np.any(self.lb > self.ub):
            raise ConfigurationError("lb must not exceed ub")
        if np.abs(self.H - self.H.T).max(initial=0.0) > 1e-10 * max(1.0, np.abs(self.H).max(initial=0.0)):
            raise ConfigurationError("H must be symmetric")

    @property
    def n(self) -> int:
        return self.g.shape[0]

    @property
    def k(self) -> int:
        return self.C.shape[0]

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.H @ x + self.g @ x)

    def stacked(self):
        """``(A, l, u)`` with the box rows first."""
        A = np.vstack([np.eye(self.n), self.C])
        l = np.concatenate([self.lb, self.c_lower])
        u = np.concatenate([self.ub, np.full(self.k, _INF)])
        return np.ascontiguousarray(A), l, u


@dataclass
class QPSolution:
    x: np.ndarray
    status: str
    primal_residual: float
    dual_residual: float
    iterations: int = 0
    y: np.ndarray = field(default=None, repr=False)
    polished: bool = False


# ----------------------------------------------------------------------------
# kernels
# ----------------------------------------------------------------------------

@numba.njit(cache=True)
def _chol_solve(L, b):
    n = L.shape[0]
    w = np.empty(n)
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * w[k]
        w[i] = s / L[i, i]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = w[i]
        for k in range(i + 1, n):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    return x


@numba.njit(cache=True)
def _matvec(M, v):
    r, c = M.shape
    out = np.zeros(r)
    for i in range(r):
        s = 0.0
        for j in range(c):
            s += M[i, j] * v[j]
        out[i] = s
    return out


@numba.njit(cache=True)
def _inf_norm(v):
    s = 0.0
    for i in range(v.shape[0]):
        a = abs(v[i])
        if a > s:
            s = a
    return s


@numba.njit(cache=True)
def _violation(Ax, l, u):
    s = 0.0
    for i in range(Ax.shape[0]):
        d = l[i] - Ax[i]
        if d > s:
            s = d
        d = Ax[i] - u[i]
        if d > s:
            s = d
    return s


@numba.njit(cache=True)
def _factor(P, A, AT, rho, sigma):
    n = P.shape[0]
    m = A.shape[0]
    K = P.copy()
    for i in range(n):
        K[i, i] += sigma
    for r in range(m):
        pr = rho[r]
        for i in range(n):
            a = A[r, i]
            if a != 0.0:
                for j in range(n):
                    K[i, j] += pr * a * A[r, j]
    return np.linalg.cholesky(K)


@numba.njit(cache=True)
def _polish(P, q, A, AT, l, u, z, y, delta, tol):
    """Solve the KKT system on the guessed active set.

    Returns ``(ok, x, y)`` where ``ok`` means the point is feasible and the
    multipliers carry the right signs.
    """
    n = P.shape[0]
    m = A.shape[0]
    act = np.empty(m, dtype=np.int64)
    side = np.empty(m)
    na = 0
    for i in range(m):
        if z[i] - l[i] < -y[i]:
            act[na] = i
            side[na] = -1.0
            na += 1
        elif u[i] - z[i] < y[i]:
            act[na] = i
            side[na] = 1.0
            na += 1
    N = n + na
    Kt = np.zeros((N, N))
    rhs = np.zeros(N)
    for i in range(n):
        for j in range(n):
            Kt[i, j] = P[i, j]
        rhs[i] = -q[i]
    for a in range(na):
        r = act[a]
        for j in range(n):
            Kt[n + a, j] = A[r, j]
            Kt[j, n + a] = A[r, j]
        rhs[n + a] = l[r] if side[a] < 0.0 else u[r]
    Kr = Kt.copy()
    for i in range(n):
        Kr[i, i] += delta
    for a in range(na):
        Kr[n + a, n + a] -= delta
    sol = np.linalg.solve(Kr, rhs)
    for _ in range(5):
        res = rhs - _matvec(Kt, sol)
        sol = sol + np.linalg.solve(Kr, res)
    x = sol[:n].copy()
    yp = np.zeros(m)
    for a in range(na):
        yp[act[a]] = sol[n + a]
    ok = True
    Ax = _matvec(A, x)
    for i in range(m):
        scale = 1.0
        if abs(l[i]) < 1e300 and abs(l[i]) > scale:
            scale = abs(l[i])
        if abs(u[i]) < 1e300 and abs(u[i]) > scale:
            scale = abs(u[i])
        if Ax[i] < l[i] - 1e-9 * scale or Ax[i] > u[i] + 1e-9 * scale:
            ok = False
    for a in range(na):
        v = sol[n + a]
        if side[a] < 0.0 and v > tol:
            ok = False
        if side[a] > 0.0 and v < -tol:
            ok = False
    stat = _matvec(P, x) + q + _matvec(AT, yp)
    if _inf_norm(stat) > tol:
        ok = False
    return ok, x, yp


@numba.njit(cache=True)
def _admm(P, q, A, AT, l, u, x, z, y, rho0, sigma, alpha, eps, max_iter,
          check_every, adapt_every, polish_delta):
    n = P.shape[0]
    m = A.shape[0]
    rho = np.full(m, rho0)
    L = _factor(P, A, AT, rho, sigma)
    best_x = x.copy()
    best_y = y.copy()
    best_res = 1e300
    prim = 1e300
    dual = 1e300
    y_prev = y.copy()
    for it in range(1, max_iter + 1):
        rhs = sigma * x - q + _matvec(AT, rho * z - y)
        xt = _chol_solve(L, rhs)
        zt = _matvec(A, xt)
        x = alpha * xt + (1.0 - alpha) * x
        zr = alpha * zt + (1.0 - alpha) * z
        z_new = np.minimum(np.maximum(zr + y / rho, l), u)
        y = y + rho * (zr - z_new)
        z = z_new
        if it % check_every == 0 or it == max_iter:
            Ax = _matvec(A, x)
            Px = _matvec(P, x)
            ATy = _matvec(AT, y)
            prim = _inf_norm(Ax - z)
            dual = _inf_norm(Px + q + ATy)
            n_ax = max(_inf_norm(Ax), _inf_norm(z))
            n_d = max(_inf_norm(Px), _inf_norm(ATy), _inf_norm(q))
            worst = max(prim, dual)
            if worst < best_res:
                best_res = worst
                best_x = x.copy()
                best_y = y.copy()
            if prim <= eps + eps * n_ax and dual <= eps + eps * n_d:
                ok, xp, yp = _polish(P, q, A, AT, l, u, z, y, polish_delta, eps)
                if ok:
                    return xp, yp, it, 1, 1
                return x, y, it, 1, 0
            if prim <= 1e3 * eps * (1.0 + n_ax):
                ok, xp, yp = _polish(P, q, A, AT, l, u, z, y, polish_delta, eps)
                if ok:
                    return xp, yp, it, 1, 1
            # primal infeasibility certificate
            dy = y - y_prev
            ndy = _inf_norm(dy)
            if ndy > 1e-12:
                cert = _inf_norm(_matvec(AT, dy)) <= eps * ndy
                s = 0.0
                for i in range(m):
                    if dy[i] > 1e-12 * ndy:
                        if u[i] == np.inf:
                            cert = False
                            break
                        s += u[i] * dy[i]
                    elif dy[i] < -1e-12 * ndy:
                        if l[i] == -np.inf:
                            cert = False
                            break
                        s += l[i] * dy[i]
                if cert and s < -eps * ndy:
                    return x, y, it, 2, 0
            if adapt_every > 0 and it % adapt_every == 0:
                num = prim / (n_ax + 1e-30)
                den = dual / (n_d + 1e-30)
                scale = np.sqrt(num / (den + 1e-30))
                if scale > 5.0 or scale < 0.2:
                    for i in range(m):
                        rho[i] = min(max(rho[i] * scale, 1e-6), 1e6)
                    L = _factor(P, A, AT, rho, sigma)
        if it % check_every == check_every - 1:
            y_prev = y.copy()
    return best_x, best_y, max_iter, 0, 0


# ----------------------------------------------------------------------------
# public API
# ----------------------------------------------------------------------------

class QPSolver:
    """Stateful solver; keeps the previous solution as a warm start.

    One instance per simulation trial. Not thread safe.
    """

    def __init__(self, tol: float = 1e-6, max_iter: int = 4000, rho: float = 0.1,
                 sigma: float = 1e-6, alpha: float = 1.6, check_every: int = 10,
                 adapt_every: int = 50, warm_start: bool = True):
        self.tol = tol
        self.max_iter = max_iter
        self.rho = rho
        self.sigma = sigma
        self.alpha = alpha
        self.check_every = check_every
        self.adapt_every = adapt_every
        self.warm_start = warm_start
        self._x = None
        self._y = None

    def reset(self):
        self._x = None
        self._y = None

    def solve(self, p: QPProblem) -> QPSolution:
        n = p.n
        hmax = np.abs(p.H).max(initial=0.0)
        scale = 1.0 / hmax if hmax > 0.0 else 1.0
        P = p.H * scale
        q = p.g * scale
        A, l, u = p.stacked()

        try:
            L = np.linalg.cholesky(P)
        except np.linalg.LinAlgError:
            L = None
            if np.linalg.eigvalsh(P).min() < -1e-8:
                raise ConfigurationError("H is not positive semidefinite") from None

        if L is not None:
            x_u = _chol_solve(L, -q)
            if np.all(x_u >= p.lb) and np.all(x_u <= p.ub) and np.all(p.C @ x_u >= p.c_lower):
                return self._finish(x_u, np.zeros(A.shape[0]), OPTIMAL, P, q, A, l, u, 0, True, scale)

        AT = np.ascontiguousarray(A.T)
        x0, y0 = self._start(n, A.shape[0])
        z0 = np.clip(A @ x0, l, u)
        if self._y is not None:
            ok, xp, yp = _polish(P, q, A, AT, l, u, z0, y0, 1e-9, self.tol)
            if ok:
                return self._finish(xp, yp, OPTIMAL, P, q, A, l, u, 0, True, scale)

        x, y, iters, code, polished = _admm(
            P, q, A, AT, l, u, x0, z0, y0, self.rho, self.sigma, self.alpha,
            self.tol, self.max_iter, self.check_every, self.adapt_every, 1e-9)
        status = {0: MAX_ITER, 1: OPTIMAL, 2: INFEASIBLE}[code]
        if status != INFEASIBLE:
            # box rows are always satisfiable exactly
            x = np.clip(x, p.lb, p.ub)
        return self._finish(x, y, status, P, q, A, l, u, iters, bool(polished), scale)

    def _start(self, n, m):
        if self.warm_start and self._x is not None and self._x.shape[0] == n:
            y = np.zeros(m)
            k = min(m, self._y.shape[0])
            y[:n] = self._y[:n]
            if k > n:
                y[n:k] = self._y[n:k]
            return self._x.copy(), y
        return np.zeros(n), np.zeros(m)

    def _finish(self, x, y, status, P, q, A, l, u, iters, polished, scale):
        Ax = A @ x
        prim = float(max(0.0, _violation(Ax, l, u)))
        dual = float(np.abs(P @ x + q + A.T @ y).max(initial=0.0))
        if status == INFEASIBLE:
            self.reset()
        else:
            self._x = x.copy()
            self._y = y.copy()
        # report multipliers of the unscaled problem
        return QPSolution(x=x, status=status, primal_residual=prim, dual_residual=dual,
                          iterations=int(iters), y=y / scale, polished=polished)


def solve_qp(p: QPProblem, tol: float = 1e-6, max_iter: int = 4000) -> QPSolution:
    """Solve a single problem from a cold start."""
    return QPSolver(tol=tol, max_iter=max_iter, warm_start=False).solve(p)


def kkt_residual(p: QPProblem, x, active_tol: float = 1e-6) -> tuple[float, float, float]:
    """KKT residuals ``(stationarity, primal, complementarity)`` at ``x``.

    Nonnegative multipliers are recovered by NNLS over the constraints whose
    slack is within ``active_tol``. Stationarity is a 2-norm; the other two
    are max-norms.
    """
    x = np.asarray(x, dtype=float)
    grad = p.H @ x + p.g
    s_lb = x - p.lb
    s_ub = p.ub - x
    s_c = p.C @ x - p.c_lower
    primal = float(max(0.0, -s_lb.min(initial=np.inf), -s_ub.min(initial=np.inf),
                       -s_c.min(initial=np.inf)))
    cols, slacks = [], []
    for i in np.flatnonzero(s_lb <= active_tol):
        e = np.zeros(p.n)
        e[i] = 1.0
        cols.append(e)
        slacks.append(s_lb[i])
    for i in np.flatnonzero(s_ub <= active_tol):
        e = np.zeros(p.n)
        e[i] = -1.0
        cols.append(e)
        slacks.append(s_ub[i])
    for j in np.flatnonzero(s_c <= active_tol):
        cols.append(p.C[j])
        slacks.append(s_c[j])
    if not cols:
        return float(np.linalg.norm(grad)), primal, 0.0
    M = np.column_stack(cols)
    lam, stat = nnls(M, grad)
    comp = float(np.max(np.abs(lam * np.asarray(slacks))))
    return float(stat), primal, comp
