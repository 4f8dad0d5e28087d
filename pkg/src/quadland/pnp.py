"""Camera pose from 3D-2D correspondences.

EPnP provides the closed-form initial pose (control-point parameterization,
null-space combination, case selection by reprojection error) and a
Gauss-Newton refiner polishes it. The squared-pixel reprojection error
functional defined here is reused by initialization, the filter's visual
factor, and the tracking-quality gate.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .camera import Intrinsics
from .manifold import exp_so3, skew


class PnpError(ValueError):
    pass


class DegenerateConfigError(PnpError):
    """Point configuration does not determine a pose."""


@dataclass
class PnpSolution:
    """Pose of the target body in the camera frame: x_cam = R x_body + t."""

    R: np.ndarray
    t: np.ndarray
    eps: float
    iterations: int = 0
    converged: bool = True


def reprojection_error(R: np.ndarray, t: np.ndarray, points: np.ndarray,
                       pixels: np.ndarray, K: Intrinsics) -> float:
    """Sum of squared pixel residuals of body points against measurements.

    Uses the full perspective projection (division by depth) so the result
    is a true pixel-squared error.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    if len(points) != len(pixels):
        raise PnpError("points and pixels must pair up")
    cam = points @ R.T + t
    if np.any(cam[:, 2] <= 1e-9):
        raise PnpError("point behind camera in reprojection")
    u = K.fx * cam[:, 0] / cam[:, 2] + K.cx
    v = K.fy * cam[:, 1] / cam[:, 2] + K.cy
    res = np.column_stack([u, v]) - pixels
    return float(np.sum(res * res))


def projection_jacobian(R: np.ndarray, t: np.ndarray, points: np.ndarray,
                        K: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Residual stack and its Jacobian wrt the pose tangent (dt, dtheta).

    Right perturbation: x_cam = R Exp(dtheta) f + t + dt. Returns the
    projected pixels (n,2) and the (2n,6) Jacobian.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    cam = points @ R.T + t
    z = cam[:, 2]
    if np.any(z <= 1e-9):
        raise PnpError("point behind camera in Jacobian")
    n = len(points)
    uv = np.column_stack([K.fx * cam[:, 0] / z + K.cx, K.fy * cam[:, 1] / z + K.cy])
    J = np.zeros((2 * n, 6))
    for i in range(n):
        x, y, zi = cam[i]
        d_uv_dX = np.array(
            [[K.fx / zi, 0.0, -K.fx * x / (zi * zi)],
             [0.0, K.fy / zi, -K.fy * y / (zi * zi)]]
        )
        dX_dt = np.eye(3)
        dX_dth = -R @ skew(points[i])
        J[2 * i:2 * i + 2, 0:3] = d_uv_dX @ dX_dt
        J[2 * i:2 * i + 2, 3:6] = d_uv_dX @ dX_dth
    return uv, J


def _control_points(points: np.ndarray) -> tuple[np.ndarray, bool]:
    """EPnP control points: centroid plus scaled principal directions.

    Returns (4,3) control points for the general case or (3,3) for planar
    configurations, plus a planar flag.
    """
    centroid = points.mean(axis=0)
    centered = points - centroid
    cov = centered.T @ centered / len(points)
    eigval, eigvec = np.linalg.eigh(cov)
    order = np.argsort(eigval)[::-1]
    eigval, eigvec = eigval[order], eigvec[:, order]
    planar = eigval[2] < 1e-10 * max(eigval[0], 1e-30)
    if eigval[0] < 1e-12:
        raise DegenerateConfigError("points are coincident")
    ndir = 2 if planar else 3
    ctrl = [centroid]
    for j in range(ndir):
        ctrl.append(centroid + np.sqrt(eigval[j]) * eigvec[:, j])
    return np.array(ctrl), planar


def _barycentric(points: np.ndarray, ctrl: np.ndarray) -> np.ndarray:
    """Coordinates alpha with points = alpha @ ctrl and rows summing to 1."""
    m = ctrl.shape[0]
    C = np.vstack([ctrl.T, np.ones(m)])  # 4 x m
    A = np.vstack([points.T, np.ones(len(points))])  # 4 x n
    alphas, *_ = np.linalg.lstsq(C, A, rcond=None)
    return alphas.T  # n x m


def _solve_betas(V: np.ndarray, ctrl: np.ndarray, case: int) -> np.ndarray:
    """Initial betas for the given EPnP case from the distance system."""
    m = ctrl.shape[0]
    pairs = list(combinations(range(m), 2))
    d2 = np.array([np.sum((ctrl[a] - ctrl[b]) ** 2) for a, b in pairs])
    dv = [[V[k][a] - V[k][b] for a, b in pairs] for k in range(V.shape[0])]

    if case == 1:
        num = sum(np.linalg.norm(dv[0][i]) * np.sqrt(d2[i]) for i in range(len(pairs)))
        den = sum(np.sum(dv[0][i] ** 2) for i in range(len(pairs)))
        if den < 1e-30:
            raise DegenerateConfigError("null-space direction is degenerate")
        return np.array([num / den])

    if case == 2:
        L = np.array(
            [[np.sum(dv[0][i] ** 2), 2 * np.sum(dv[0][i] * dv[1][i]), np.sum(dv[1][i] ** 2)]
             for i in range(len(pairs))]
        )
        sol, *_ = np.linalg.lstsq(L, d2, rcond=None)
        b11, b12, b22 = sol
        b1 = np.sqrt(abs(b11))
        b2 = np.sqrt(abs(b22)) * (1.0 if b12 >= 0 else -1.0)
        return np.array([b1, b2])

    if case == 3:
        L = np.array(
            [[np.sum(dv[0][i] ** 2),
              2 * np.sum(dv[0][i] * dv[1][i]),
              np.sum(dv[1][i] ** 2),
              2 * np.sum(dv[0][i] * dv[2][i]),
              2 * np.sum(dv[1][i] * dv[2][i]),
              np.sum(dv[2][i] ** 2)]
             for i in range(len(pairs))]
        )
        sol, *_ = np.linalg.lstsq(L, d2, rcond=None)
        b11, b12, b22, b13, b23, b33 = sol
        b1 = np.sqrt(abs(b11))
        b2 = np.sqrt(abs(b22)) * (1.0 if b12 >= 0 else -1.0)
        b3 = np.sqrt(abs(b33)) * (1.0 if b13 >= 0 else -1.0)
        return np.array([b1, b2, b3])

    raise ValueError(f"unsupported EPnP case {case}")


def _refine_betas(V: np.ndarray, ctrl: np.ndarray, betas: np.ndarray,
                  iters: int = 10) -> np.ndarray:
    """Gauss-Newton on the control-point distance residuals."""
    m = ctrl.shape[0]
    pairs = list(combinations(range(m), 2))
    d2 = np.array([np.sum((ctrl[a] - ctrl[b]) ** 2) for a, b in pairs])
    dv = np.array([[V[k][a] - V[k][b] for a, b in pairs] for k in range(len(betas))])
    for _ in range(iters):
        diff = np.tensordot(betas, dv, axes=1)  # pairs x 3
        r = np.sum(diff * diff, axis=1) - d2
        J = 2.0 * np.einsum("pj,kpj->pk", diff, dv)
        try:
            step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        except np.linalg.LinAlgError:
            break
        betas = betas + step
        if np.linalg.norm(step) < 1e-12:
            break
    return betas


def _pose_from_betas(V: np.ndarray, betas: np.ndarray, alphas: np.ndarray,
                     points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Camera control points -> camera point cloud -> absolute orientation."""
    ctrl_cam = np.tensordot(betas, V, axes=1)
    cam_pts = alphas @ ctrl_cam
    if cam_pts[:, 2].mean() < 0:
        cam_pts = -cam_pts
    # Horn/Kabsch absolute orientation between body and camera clouds.
    wc = points.mean(axis=0)
    cc = cam_pts.mean(axis=0)
    H = (points - wc).T @ (cam_pts - cc)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    t = cc - R @ wc
    return R, t


def epnp(points: np.ndarray, pixels: np.ndarray, K: Intrinsics) -> PnpSolution:
    """Closed-form pose from >= 4 correspondences.

    Evaluates null-space combination cases 1-3 and keeps the lowest
    reprojection error. Planar constellations use the 3-control-point
    branch automatically.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    n = len(points)
    if n < 4 or len(pixels) != n:
        raise PnpError("need at least 4 paired correspondences")

    ctrl, planar = _control_points(points)
    m = ctrl.shape[0]
    alphas = _barycentric(points, ctrl)

    M = np.zeros((2 * n, 3 * m))
    for i in range(n):
        for j in range(m):
            a = alphas[i, j]
            M[2 * i, 3 * j:3 * j + 3] = [a * K.fx, 0.0, a * (K.cx - pixels[i, 0])]
            M[2 * i + 1, 3 * j:3 * j + 3] = [0.0, a * K.fy, a * (K.cy - pixels[i, 1])]

    MtM = M.T @ M
    eigval, eigvec = np.linalg.eigh(MtM)
    if not np.all(np.isfinite(eigvec)):
        raise DegenerateConfigError("normal matrix is not finite")
    # Null-space basis: eigenvectors of the smallest eigenvalues, reshaped
    # to per-control-point 3-vectors.
    n_basis = 3 if planar else 4
    V = np.array([eigvec[:, k].reshape(m, 3) for k in range(n_basis)])

    best = None
    max_case = 2 if planar else 3
    for case in range(1, max_case + 1):
        try:
            betas = _solve_betas(V[:case], ctrl, case)
            betas = _refine_betas(V[:case], ctrl, betas)
            R, t = _pose_from_betas(V[:case], betas, alphas, points)
            err = reprojection_error(R, t, points, pixels, K)
        except (PnpError, np.linalg.LinAlgError):
            continue
        if best is None or err < best.eps:
            best = PnpSolution(R=R, t=t, eps=err)
    if best is None:
        raise DegenerateConfigError("all EPnP cases failed")
    return best


def refine_gn(initial: PnpSolution, points: np.ndarray, pixels: np.ndarray,
              K: Intrinsics, max_iter: int = 20, tol: float = 1e-10) -> PnpSolution:
    """Gauss-Newton reprojection refinement with step halving.

    The error is non-increasing across accepted steps; if eight successive
    halvings cannot reduce it the best iterate is returned flagged as not
    converged.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    R = initial.R.copy()
    t = initial.t.copy()
    err = reprojection_error(R, t, points, pixels, K)
    iterations = 0
    converged = True
    for _ in range(max_iter):
        uv, J = projection_jacobian(R, t, points, K)
        r = (uv - pixels).reshape(-1)
        JtJ = J.T @ J
        try:
            step = np.linalg.solve(JtJ + 1e-12 * np.eye(6), -J.T @ r)
        except np.linalg.LinAlgError:
            converged = False
            break
        if np.linalg.norm(step) < tol:
            break
        scale = 1.0
        accepted = False
        for _ in range(8):
            R_new = R @ exp_so3(scale * step[3:6])
            t_new = t + scale * step[0:3]
            try:
                err_new = reprojection_error(R_new, t_new, points, pixels, K)
            except PnpError:
                err_new = np.inf
            if err_new <= err:
                R, t, err = R_new, t_new, err_new
                accepted = True
                break
            scale *= 0.5
        iterations += 1
        if not accepted:
            converged = False
            break
    return PnpSolution(R=R, t=t, eps=err, iterations=iterations, converged=converged)
