"""Iterated EKF on the product manifold.

Prediction uses a constant-velocity / hover-thrust model whose Jacobian is
taken numerically under boxplus perturbations. The update solves a small
MAP problem with Gauss-Newton: a dynamic factor anchoring the posterior to
the prior under the predicted covariance, plus visual (pixel reprojection)
and velocity factors. After the iterations converge, the Kalman gain is
formed at the final linearization point and the covariance is propagated
in Joseph form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import Intrinsics
from .manifold import (
    ManifoldState,
    boxminus,
    boxplus,
    log_so3,
    numerical_jacobian,
    skew,
    so3_right_jacobian_inv,
)
from .pnp import PnpError, projection_jacobian

GRAVITY = np.array([0.0, 0.0, -9.81])


class FilterError(RuntimeError):
    pass


class StalePredictionError(FilterError):
    """Prediction gap too large; caller should re-initialize."""


@dataclass
class Belief:
    """State estimate with tangent-space covariance."""

    x: ManifoldState
    P: np.ndarray

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float).reshape(9, 9)

    def check(self, sym_tol: float = 1e-9, eig_tol: float = -1e-10):
        if np.max(np.abs(self.P - self.P.T)) > sym_tol:
            raise FilterError("covariance lost symmetry")
        if np.min(np.linalg.eigvalsh(self.P)) < eig_tol:
            raise FilterError("covariance lost positive semidefiniteness")

    def copy(self) -> "Belief":
        return Belief(self.x.copy(), self.P.copy())


@dataclass
class ProcessNoise:
    """Angular-velocity and thrust noise densities.

    sigma_thrust acts along the body z (thrust) axis; sigma_acc_floor is
    an isotropic acceleration noise floor absorbing the hover-thrust
    model's unmodeled lateral/frame accelerations.
    """

    sigma_rot: float = 1.0        # rad/s
    sigma_thrust: float = 1.0     # m/s^2 along body z
    sigma_acc_floor: float = 0.0  # m/s^2 isotropic

    def __post_init__(self):
        if self.sigma_rot <= 0 or self.sigma_thrust <= 0:
            raise ValueError("noise densities must be positive")
        if self.sigma_acc_floor < 0:
            raise ValueError("acceleration floor must be non-negative")

    def discrete(self, x: ManifoldState, dt: float) -> np.ndarray:
        Q = np.zeros((9, 9))
        Q[3:6, 3:6] = (self.sigma_rot**2 * dt) * np.eye(3)
        thrust_dir = x.R @ np.array([0.0, 0.0, 1.0])
        Q[6:9, 6:9] = (self.sigma_thrust**2 * dt) * np.outer(thrust_dir, thrust_dir)
        Q[6:9, 6:9] += (self.sigma_acc_floor**2 * dt) * np.eye(3)
        return Q


@dataclass
class MeasNoise:
    """Pixel and velocity measurement standard deviations."""

    sigma_px: float = 1.0       # px
    sigma_vel: float = 0.1      # m/s

    def __post_init__(self):
        if self.sigma_px <= 0 or self.sigma_vel <= 0:
            raise ValueError("measurement noise must be positive")


def mean_dynamics(x: ManifoldState, dt: float) -> ManifoldState:
    """Expected state after dt: drift p with v, hold R, thrust near hover."""
    return ManifoldState(
        x.p + dt * x.v,
        x.R,
        x.v + dt * (x.R @ (-GRAVITY) + GRAVITY),
    )


def predict(belief: Belief, dt: float, noise: ProcessNoise) -> Belief:
    """Propagate the mean and covariance over dt."""
    if not 0.0 < dt < 0.2:
        raise StalePredictionError(f"prediction gap {dt:.3f}s outside (0, 0.2)")
    F = numerical_jacobian(lambda s: mean_dynamics(s, dt), belief.x)
    x_new = mean_dynamics(belief.x, dt)
    Q = noise.discrete(belief.x, dt)
    P_new = F @ belief.P @ F.T + Q
    return Belief(x_new, 0.5 * (P_new + P_new.T))


@dataclass
class VelPrefilter:
    """Finite-difference velocity pseudo-measurement with IIR smoothing."""

    alpha: float = 0.3
    _positions: list = field(default_factory=list)
    _times: list = field(default_factory=list)
    _smoothed: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("IIR coefficient must lie in [0, 1]")

    def push(self, p: np.ndarray, t: float):
        self._positions.append(np.asarray(p, dtype=float).copy())
        self._times.append(float(t))
        if len(self._positions) > 2:
            self._positions.pop(0)
            self._times.pop(0)

    def measurement(self) -> np.ndarray | None:
        """Smoothed velocity from the two stored positions, or None."""
        if len(self._positions) < 2:
            return None
        dt = self._times[1] - self._times[0]
        if dt <= 0:
            return None
        raw = (self._positions[1] - self._positions[0]) / dt
        if self._smoothed is None:
            self._smoothed = raw
        else:
            self._smoothed = self.alpha * raw + (1.0 - self.alpha) * self._smoothed
        return self._smoothed.copy()

    def reset(self):
        self._positions.clear()
        self._times.clear()
        self._smoothed = None


class PixelFactor:
    """Reprojection residuals of corresponded markers."""

    def __init__(self, points: np.ndarray, pixels: np.ndarray, K: Intrinsics,
                 cam_position: np.ndarray, cam_rotation: np.ndarray,
                 sigma_px: float):
        self.points = np.asarray(points, dtype=float).reshape(-1, 3)
        self.pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
        self.K = K
        self.cam_position = np.asarray(cam_position, dtype=float).reshape(3)
        self.cam_rotation = np.asarray(cam_rotation, dtype=float).reshape(3, 3)
        self.sigma = float(sigma_px)

    def dim(self) -> int:
        return 2 * len(self.points)

    def evaluate(self, x: ManifoldState) -> tuple[np.ndarray, np.ndarray]:
        """Whitened residual and Jacobian wrt the 9-dim tangent."""
        R_pose = self.cam_rotation.T @ x.R
        t_pose = self.cam_rotation.T @ (x.p - self.cam_position)
        uv, J6 = projection_jacobian(R_pose, t_pose, self.points, self.K)
        r = (uv - self.pixels).reshape(-1) / self.sigma
        J = np.zeros((self.dim(), 9))
        # Pose-tangent blocks: platform-frame dp maps through the camera
        # rotation; the rotation perturbation is shared with the PnP form.
        J[:, 0:3] = J6[:, 0:3] @ self.cam_rotation.T / self.sigma
        J[:, 3:6] = J6[:, 3:6] / self.sigma
        return r, J

    def noise_cov(self) -> np.ndarray:
        return self.sigma**2 * np.eye(self.dim())


class VelocityFactor:
    """Direct measurement of the platform-frame velocity."""

    def __init__(self, v_meas: np.ndarray, sigma_vel: float):
        self.v = np.asarray(v_meas, dtype=float).reshape(3)
        self.sigma = float(sigma_vel)

    def dim(self) -> int:
        return 3

    def evaluate(self, x: ManifoldState) -> tuple[np.ndarray, np.ndarray]:
        r = (x.v - self.v) / self.sigma
        J = np.zeros((3, 9))
        J[:, 6:9] = np.eye(3) / self.sigma
        return r, J

    def noise_cov(self) -> np.ndarray:
        return self.sigma**2 * np.eye(3)


class PositionFactor:
    """Direct measurement of the platform-frame position (test scaffolding
    and reduced linear-Gaussian scenarios)."""

    def __init__(self, p_meas: np.ndarray, sigma_pos: float):
        self.p = np.asarray(p_meas, dtype=float).reshape(3)
        self.sigma = float(sigma_pos)

    def dim(self) -> int:
        return 3

    def evaluate(self, x: ManifoldState) -> tuple[np.ndarray, np.ndarray]:
        r = (x.p - self.p) / self.sigma
        J = np.zeros((3, 9))
        J[:, 0:3] = np.eye(3) / self.sigma
        return r, J

    def noise_cov(self) -> np.ndarray:
        return self.sigma**2 * np.eye(3)


@dataclass
class UpdateInfo:
    iterations: int
    objective: float
    status: str  # updated / skipped / no-convergence
    pixel_error: float = 0.0


def joseph_propagate(P_prior: np.ndarray, H: np.ndarray, K_gain: np.ndarray,
                     R: np.ndarray) -> np.ndarray:
    """Symmetric covariance update (I-KH) P (I-KH)^T + K R K^T."""
    IKH = np.eye(P_prior.shape[0]) - K_gain @ H
    P = IKH @ P_prior @ IKH.T + K_gain @ R @ K_gain.T
    return 0.5 * (P + P.T)


def _prior_jacobian(x: ManifoldState, prior: ManifoldState) -> np.ndarray:
    """d/d(delta) of (x boxplus delta) boxminus prior at delta = 0."""
    D = np.eye(9)
    phi = log_so3(prior.R.T @ x.R)
    D[3:6, 3:6] = so3_right_jacobian_inv(phi)
    return D


def update(prior: Belief, factors: list, max_iter: int = 10,
           tol: float = 1e-6) -> tuple[Belief, UpdateInfo]:
    """Gauss-Newton MAP update fusing the prior with measurement factors.

    Returns the posterior belief and iteration info. With no factors the
    prior is passed through with status 'skipped'.
    """
    if not factors:
        return prior.copy(), UpdateInfo(0, 0.0, "skipped")

    P_prior = 0.5 * (prior.P + prior.P.T)
    try:
        L_prior = np.linalg.cholesky(P_prior + 1e-14 * np.eye(9))
    except np.linalg.LinAlgError:
        raise FilterError("prior covariance is not positive definite")

    def whiten_prior(vec):
        return np.linalg.solve(L_prior, vec)

    def total_cost(x):
        r_d = whiten_prior(boxminus(x, prior.x))
        cost = float(r_d @ r_d)
        for f in factors:
            r, _ = f.evaluate(x)
            cost += float(r @ r)
        return cost

    x = prior.x.copy()
    cost = total_cost(x)
    iterations = 0
    status = "updated"
    for _ in range(max_iter):
        rows_r = [whiten_prior(boxminus(x, prior.x))]
        rows_J = [np.linalg.solve(L_prior, _prior_jacobian(x, prior.x))]
        try:
            for f in factors:
                r, J = f.evaluate(x)
                rows_r.append(r)
                rows_J.append(J)
        except PnpError:
            status = "no-convergence"
            break
        r_all = np.concatenate(rows_r)
        J_all = np.vstack(rows_J)
        JtJ = J_all.T @ J_all
        rhs = -J_all.T @ r_all
        try:
            step = np.linalg.solve(JtJ, rhs)
        except np.linalg.LinAlgError:
            step = np.linalg.solve(JtJ + 1e-6 * np.eye(9), rhs)
        if not np.all(np.isfinite(step)):
            status = "no-convergence"
            break
        iterations += 1
        # Step halving keeps the objective non-increasing.
        scale = 1.0
        accepted = False
        for _ in range(8):
            x_try = boxplus(x, scale * step)
            cost_try = total_cost(x_try)
            if cost_try <= cost + 1e-15:
                x, cost = x_try, cost_try
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            status = "no-convergence"
            break
        if np.linalg.norm(scale * step) < tol:
            break

    # Kalman gain and Joseph covariance at the final linearization point.
    H_rows, R_blocks, dims = [], [], []
    for f in factors:
        _, J = f.evaluate(x)
        # Unwhiten: factor Jacobians come pre-divided by sigma.
        R_f = f.noise_cov()
        sqrt_R = np.sqrt(np.diag(R_f))
        H_rows.append(J * sqrt_R[:, None])
        R_blocks.append(R_f)
        dims.append(f.dim())
    H = np.vstack(H_rows)
    R = np.zeros((sum(dims), sum(dims)))
    at = 0
    for d, block in zip(dims, R_blocks):
        R[at:at + d, at:at + d] = block
        at += d
    S = H @ P_prior @ H.T + R
    try:
        K_gain = P_prior @ H.T @ np.linalg.inv(S)
    except np.linalg.LinAlgError:
        return prior.copy(), UpdateInfo(iterations, cost, "skipped")
    P_post = joseph_propagate(P_prior, H, K_gain, R)
    info = UpdateInfo(iterations=iterations, objective=cost, status=status)
    return Belief(x, P_post), info
