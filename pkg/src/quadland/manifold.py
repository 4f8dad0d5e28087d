"""Rotation-group and product-manifold math used by the estimator.

The relative state lives on R^3 x SO(3) x R^3 (position, attitude,
velocity). Retraction and local difference are applied block-wise: vector
blocks add, the rotation block composes with the SO(3) exponential.
Tangent vectors are ordered (dp, dtheta, dv).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SMALL_ANGLE = 1e-8
ORTHO_TOL = 1e-9

# Tangent-space block layout, fixed everywhere in the package.
TAN_P = slice(0, 3)
TAN_R = slice(3, 6)
TAN_V = slice(6, 9)
TANGENT_DIM = 9


class ManifoldError(ValueError):
    """Invalid group element or tangent vector."""


def skew(w: np.ndarray) -> np.ndarray:
    """3x3 cross-product matrix of w."""
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def check_rotation(R: np.ndarray, tol: float = ORTHO_TOL) -> None:
    """Raise unless R is orthonormal with determinant +1."""
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise ManifoldError("rotation must be a finite 3x3 matrix")
    if np.max(np.abs(R.T @ R - np.eye(3))) > tol * 10:
        raise ManifoldError("rotation is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > tol * 10:
        raise ManifoldError("rotation has det != +1")


def exp_so3(w: np.ndarray) -> np.ndarray:
    """Rodrigues map from a rotation vector to a rotation matrix.

    Falls back to a second-order series for angles below SMALL_ANGLE to
    avoid 0/0 in the Rodrigues coefficients.
    """
    w = np.asarray(w, dtype=float)
    if w.shape != (3,) or not np.all(np.isfinite(w)):
        raise ManifoldError("rotation vector must be a finite length-3 vector")
    angle = np.linalg.norm(w)
    W = skew(w)
    if angle < SMALL_ANGLE:
        return np.eye(3) + W + 0.5 * (W @ W)
    s = np.sin(angle) / angle
    c = (1.0 - np.cos(angle)) / (angle * angle)
    return np.eye(3) + s * W + c * (W @ W)


def log_so3(R: np.ndarray) -> np.ndarray:
    """Rotation vector of R with angle in [0, pi].

    For large angles the trace-based arccos is ill-conditioned, so the
    angle is recovered from the antisymmetric part via arcsin; very close
    to pi the axis comes from the symmetric outer-product form with its
    sign fixed against the antisymmetric part.
    """
    check_rotation(R)
    trace = float(np.trace(R))
    cos_angle = min(1.0, max(-1.0, 0.5 * (trace - 1.0)))
    angle = np.arccos(cos_angle)
    sin_axis = 0.5 * np.array(
        [R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]
    )
    if angle < SMALL_ANGLE:
        return sin_axis
    if angle < 2.0:
        return (angle / np.sin(angle)) * sin_axis
    # angle in (2, pi]: sin_axis = sin(angle) * axis with sin small.
    s = float(np.linalg.norm(sin_axis))
    angle = np.pi - np.arcsin(min(1.0, s))
    if np.pi - angle > 1e-6:
        return (angle / s) * sin_axis
    # Within 1e-6 of pi: axis from (R + R^T)/2 = cos I + (1 - cos) a a^T,
    # using the column with the largest diagonal entry.
    B = 0.5 * (R + R.T) - cos_angle * np.eye(3)
    k = int(np.argmax(np.diag(B)))
    axis = B[:, k]
    axis = axis / np.linalg.norm(axis)
    if np.dot(sin_axis, axis) < 0.0:
        axis = -axis
    return angle * axis


def so3_right_jacobian_inv(w: np.ndarray) -> np.ndarray:
    """Inverse right Jacobian of SO(3): d/d(delta) log(Exp(w) Exp(delta)) at 0."""
    w = np.asarray(w, dtype=float)
    angle = np.linalg.norm(w)
    W = skew(w)
    if angle < SMALL_ANGLE:
        return np.eye(3) + 0.5 * W + (W @ W) / 12.0
    coeff = 1.0 / (angle * angle) - (1.0 + np.cos(angle)) / (2.0 * angle * np.sin(angle))
    return np.eye(3) + 0.5 * W + coeff * (W @ W)


@dataclass
class ManifoldState:
    """Relative state x = [p, R, v] of the vehicle in the platform frame.

    p (m) and v (m/s) are expressed in the platform frame; R rotates the
    vehicle body frame into the platform frame.
    """

    p: np.ndarray
    R: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).reshape(3)
        self.R = np.asarray(self.R, dtype=float).reshape(3, 3)
        self.v = np.asarray(self.v, dtype=float).reshape(3)
        if not (np.all(np.isfinite(self.p)) and np.all(np.isfinite(self.v))):
            raise ManifoldError("state has non-finite entries")
        check_rotation(self.R)

    @classmethod
    def identity(cls) -> "ManifoldState":
        return cls(np.zeros(3), np.eye(3), np.zeros(3))

    def copy(self) -> "ManifoldState":
        return ManifoldState(self.p.copy(), self.R.copy(), self.v.copy())


def boxplus(x: ManifoldState, delta: np.ndarray) -> ManifoldState:
    """Retract a 9-vector tangent perturbation onto the manifold."""
    delta = np.asarray(delta, dtype=float).reshape(TANGENT_DIM)
    if not np.all(np.isfinite(delta)):
        raise ManifoldError("tangent vector has non-finite entries")
    return ManifoldState(
        x.p + delta[TAN_P],
        x.R @ exp_so3(delta[TAN_R]),
        x.v + delta[TAN_V],
    )


def boxminus(a: ManifoldState, b: ManifoldState) -> np.ndarray:
    """Local difference a (-) b such that b (+) (a (-) b) = a."""
    delta = np.empty(TANGENT_DIM)
    delta[TAN_P] = a.p - b.p
    delta[TAN_R] = log_so3(b.R.T @ a.R)
    delta[TAN_V] = a.v - b.v
    return delta


def numerical_jacobian(f, x: ManifoldState, eps: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of f at x under boxplus perturbations.

    f may map to a plain vector or to another ManifoldState; in the latter
    case column differences are taken with boxminus. eps must lie in
    [1e-8, 1e-4].
    """
    if not 1e-8 <= eps <= 1e-4:
        raise ValueError("finite-difference step must be in [1e-8, 1e-4]")
    cols = []
    for i in range(TANGENT_DIM):
        step = np.zeros(TANGENT_DIM)
        step[i] = eps
        hi = f(boxplus(x, step))
        lo = f(boxplus(x, -step))
        if isinstance(hi, ManifoldState):
            diff = boxminus(hi, lo)
        else:
            hi = np.asarray(hi, dtype=float)
            lo = np.asarray(lo, dtype=float)
            diff = hi - lo
        if not np.all(np.isfinite(diff)):
            raise FloatingPointError("function returned non-finite values")
        cols.append(diff / (2.0 * eps))
    return np.column_stack(cols)


def rotation_angle_deg(R: np.ndarray) -> float:
    """Geodesic angle of R in degrees."""
    return float(np.degrees(np.linalg.norm(log_so3(R))))


def yaw_rotation(yaw: float) -> np.ndarray:
    """Rotation about +z by yaw radians."""
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_to_quaternion(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) of R, w >= 0 (Shepperd's method)."""
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s,
             (R[1, 0] - R[0, 1]) / s]
        )
    else:
        k = int(np.argmax(np.diag(R)))
        i, j = (k + 1) % 3, (k + 2) % 3
        s = np.sqrt(R[k, k] - R[i, i] - R[j, j] + 1.0) * 2
        q = np.empty(4)
        q[0] = (R[j, i] - R[i, j]) / s
        q[1 + k] = 0.25 * s
        q[1 + i] = (R[i, k] + R[k, i]) / s
        q[1 + j] = (R[j, k] + R[k, j]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a (w, x, y, z) quaternion."""
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
