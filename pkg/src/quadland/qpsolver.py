"""Dense convex QP solver.

Operator-splitting (ADMM) iteration with over-relaxation, adaptive
penalty, and an active-set polish step. Solves

    minimize   0.5 x^T P x + q^T x
    subject to l <= A x <= u

with equality rows encoded as l = u. Problems of planner size (tens of
variables, hundreds of rows) solve in milliseconds with dense linear
algebra.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class QpFormatError(ValueError):
    pass


@dataclass
class QpProblem:
    P: np.ndarray
    q: np.ndarray
    A: np.ndarray
    l: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.q = np.asarray(self.q, dtype=float).reshape(-1)
        n = len(self.q)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        m = self.A.shape[0]
        self.l = np.asarray(self.l, dtype=float).reshape(m)
        self.u = np.asarray(self.u, dtype=float).reshape(m)
        if self.P.shape != (n, n):
            raise QpFormatError("cost matrix shape mismatch")
        scale = max(1.0, float(np.max(np.abs(self.P))))
        if np.max(np.abs(self.P - self.P.T)) > 1e-9 * scale:
            raise QpFormatError("cost matrix must be symmetric")
        if np.any(self.l > self.u + 1e-12):
            raise QpFormatError("lower bounds exceed upper bounds")

    @property
    def n(self) -> int:
        return len(self.q)

    @property
    def m(self) -> int:
        return self.A.shape[0]


@dataclass
class QpSolution:
    x: np.ndarray
    y: np.ndarray
    status: str  # solved / max-iter / infeasible
    iterations: int
    primal_residual: float
    dual_residual: float
    objective: float = 0.0


def _objective(qp: QpProblem, x: np.ndarray) -> float:
    return float(0.5 * x @ qp.P @ x + qp.q @ x)


def _kkt_terms(qp: QpProblem, x: np.ndarray, y: np.ndarray):
    Ax = qp.A @ x
    stationarity = qp.P @ x + qp.q + qp.A.T @ y
    primal = np.maximum(np.maximum(Ax - qp.u, qp.l - Ax), 0.0)
    slack_lo = np.where(np.isfinite(qp.l), Ax - qp.l, 0.0)
    slack_hi = np.where(np.isfinite(qp.u), qp.u - Ax, 0.0)
    comp = np.abs(np.minimum(y, 0.0) * slack_lo) + np.abs(
        np.maximum(y, 0.0) * slack_hi
    )
    # Equality rows have no slack to complement.
    comp = np.where(qp.u - qp.l < 1e-12, 0.0, comp)
    return stationarity, primal, comp


def check_kkt(qp: QpProblem, sol: QpSolution, tol: float = 1e-6) -> dict:
    """KKT residual report: stationarity, primal feasibility, slackness."""
    stationarity, primal, comp = _kkt_terms(qp, sol.x, sol.y)
    report = {
        "stationarity": float(np.max(np.abs(stationarity), initial=0.0)),
        "primal": float(np.max(primal, initial=0.0)),
        "complementarity": float(np.max(comp, initial=0.0)),
    }
    report["ok"] = all(v < tol for k, v in report.items() if k != "ok")
    return report


def _polish(qp: QpProblem, x: np.ndarray, y: np.ndarray, act_tol: float):
    """Solve the equality KKT system on the active set and keep the result
    if it improves the worst KKT residual."""
    Ax = qp.A @ x
    is_eq = qp.u - qp.l < 1e-12
    lower = (~is_eq) & ((Ax - qp.l < act_tol) | (y < -act_tol))
    upper = (~is_eq) & ((qp.u - Ax < act_tol) | (y > act_tol))
    active = is_eq | lower | upper
    idx = np.nonzero(active)[0]
    b = np.where(is_eq | lower, qp.l, qp.u)[idx]
    # Upper-active rows keep u even if both flags fired (ties broken by y).
    both = lower[idx] & upper[idx]
    if np.any(both):
        b[both] = np.where(y[idx][both] > 0, qp.u[idx][both], qp.l[idx][both])

    n, k = qp.n, len(idx)
    K = np.zeros((n + k, n + k))
    K[:n, :n] = qp.P + 1e-12 * np.eye(n)
    if k:
        Aact = qp.A[idx]
        K[:n, n:] = Aact.T
        K[n:, :n] = Aact
    rhs = np.concatenate([-qp.q, b])
    try:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    except np.linalg.LinAlgError:
        return x, y
    x_new = sol[:n]
    y_new = np.zeros(qp.m)
    y_new[idx] = sol[n:]

    def worst(xc, yc):
        s, p, c = _kkt_terms(qp, xc, yc)
        return max(np.max(np.abs(s), initial=0.0), np.max(p, initial=0.0),
                   np.max(c, initial=0.0))

    if worst(x_new, y_new) < worst(x, y):
        return x_new, y_new
    return x, y


def solve(qp: QpProblem, eps_abs: float = 1e-8, eps_rel: float = 1e-8,
          max_iter: int = 20000, x0: np.ndarray | None = None,
          y0: np.ndarray | None = None) -> QpSolution:
    """ADMM with over-relaxation, adaptive penalty, and polish.

    Terminates when both primal and dual residuals fall below their
    tolerances; reports certified primal infeasibility when the dual
    direction test fires.
    """
    n, m = qp.n, qp.m
    if m == 0:
        x = np.linalg.solve(qp.P + 1e-12 * np.eye(n), -qp.q)
        return QpSolution(x=x, y=np.zeros(0), status="solved", iterations=0,
                          primal_residual=0.0, dual_residual=0.0,
                          objective=_objective(qp, x))

    # Row equilibration: unit inf-norm rows give scaling-invariant behaviour.
    row_norm = np.max(np.abs(qp.A), axis=1)
    d = np.where(row_norm > 1e-12, 1.0 / np.maximum(row_norm, 1e-12), 1.0)
    A = qp.A * d[:, None]
    l = qp.l * d
    u = qp.u * d
    # Scale the cost to unit magnitude in both directions; without the
    # upscaling, tiny cost matrices leave the dual residual dominated by
    # round-off and the iteration stalls.
    cost_mag = max(float(np.max(np.abs(qp.P))), float(np.max(np.abs(qp.q))), 1e-12)
    c = 1.0 / cost_mag
    P = qp.P * c
    q = qp.q * c

    sigma = 1e-6
    alpha = 1.6
    rho_eq_scale = 1e3  # stiffer penalty on equality rows
    is_eq = (u - l) < 1e-12

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    y = np.zeros(m) if y0 is None else (np.asarray(y0, dtype=float) * c / d)
    z = np.clip(A @ x, l, u)

    rho = 0.1

    def factor(rho_val):
        rho_vec = np.where(is_eq, rho_val * rho_eq_scale, rho_val)
        M = P + sigma * np.eye(n) + (A.T * rho_vec) @ A
        return np.linalg.cholesky(M), rho_vec

    L, rho_vec = factor(rho)
    status = "max-iter"
    iterations = max_iter
    r_prim = np.inf
    r_dual = np.inf

    for it in range(1, max_iter + 1):
        rhs = sigma * x - q + A.T @ (rho_vec * z - y)
        x_t = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
        z_t = A @ x_t
        x_new = alpha * x_t + (1 - alpha) * x
        z_mix = alpha * z_t + (1 - alpha) * z
        z_new = np.clip(z_mix + y / rho_vec, l, u)
        y_new = y + rho_vec * (z_mix - z_new)

        dy = y_new - y
        x, z, y = x_new, z_new, y_new

        if it % 10 == 0 or it == max_iter:
            Ax = A @ x
            Px = P @ x
            Aty = A.T @ y
            r_prim = float(np.max(np.abs(Ax - z), initial=0.0))
            r_dual = float(np.max(np.abs(Px + q + Aty), initial=0.0))
            eps_prim = eps_abs + eps_rel * max(
                np.max(np.abs(Ax), initial=0.0), np.max(np.abs(z), initial=0.0)
            )
            eps_dual = eps_abs + eps_rel * max(
                np.max(np.abs(Px), initial=0.0),
                np.max(np.abs(Aty), initial=0.0),
                np.max(np.abs(q), initial=0.0),
            )
            if r_prim < eps_prim and r_dual < eps_dual:
                status = "solved"
                iterations = it
                break

            # Primal infeasibility certificate from the dual direction.
            ndy = float(np.max(np.abs(dy), initial=0.0))
            if ndy > 1e-14:
                dyn = dy / ndy
                pos = dyn > 1e-12
                neg = dyn < -1e-12
                if np.any(pos & ~np.isfinite(u)) or np.any(neg & ~np.isfinite(l)):
                    support = np.inf
                else:
                    support = float(u[pos] @ dyn[pos] + l[neg] @ dyn[neg])
                if (np.max(np.abs(A.T @ dyn), initial=0.0) < 1e-10
                        and support < -1e-10):
                    status = "infeasible"
                    iterations = it
                    break

            # Adaptive penalty keeps primal and dual progress balanced.
            if it % 50 == 0:
                scale_p = max(np.max(np.abs(Ax), initial=0.0),
                              np.max(np.abs(z), initial=0.0), 1e-12)
                scale_d = max(np.max(np.abs(Px), initial=0.0),
                              np.max(np.abs(Aty), initial=0.0),
                              np.max(np.abs(q), initial=0.0), 1e-12)
                ratio = np.sqrt((r_prim / scale_p) / max(r_dual / scale_d, 1e-16))
                if ratio > 5.0 or ratio < 0.2:
                    rho = float(np.clip(rho * ratio, 1e-6, 1e6))
                    L, rho_vec = factor(rho)

    # Undo scaling: duals absorb both the row and cost scale factors.
    y_out = (y * d) / c
    x_out = x.copy()
    if status in ("solved", "max-iter"):
        x_out, y_out = _polish(qp, x_out, y_out, act_tol=1e-7)
        stat, prim, _ = _kkt_terms(qp, x_out, y_out)
        r_dual = float(np.max(np.abs(stat), initial=0.0))
        r_prim = float(np.max(prim, initial=0.0))

    return QpSolution(
        x=x_out,
        y=y_out,
        status=status,
        iterations=iterations,
        primal_residual=r_prim,
        dual_residual=r_dual,
        objective=_objective(qp, x_out),
    )
