"""Pinhole RGB-D camera model shared by sensing, corridor, and simulator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .manifold import check_rotation


class CameraError(ValueError):
    pass


class BehindCameraError(CameraError):
    """Point has non-positive depth along the optical axis."""


@dataclass
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise CameraError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise CameraError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


def intrinsics_from_fov(fov_deg: tuple[float, float], resolution: tuple[int, int]) -> Intrinsics:
    """Intrinsics whose frustum matches the given full field of view.

    A ray at half the field of view projects onto the image border.
    """
    fov_w, fov_h = fov_deg
    width, height = resolution
    if not (0.0 < fov_w < 180.0 and 0.0 < fov_h < 180.0):
        raise CameraError("field of view must be within (0, 180) degrees")
    fx = (width / 2.0) / np.tan(np.radians(fov_w) / 2.0)
    fy = (height / 2.0) / np.tan(np.radians(fov_h) / 2.0)
    return Intrinsics(fx=fx, fy=fy, cx=width / 2.0, cy=height / 2.0, width=width, height=height)


def project(point: np.ndarray, K: Intrinsics) -> tuple[float, float, float, bool]:
    """Project a camera-frame point to (u, v, depth, inside-image flag)."""
    x, y, z = np.asarray(point, dtype=float)
    if z <= 1e-6:
        raise BehindCameraError(f"point at z={z:.3g} is behind the camera")
    u = K.fx * x / z + K.cx
    v = K.fy * y / z + K.cy
    inside = (0.0 <= u < K.width) and (0.0 <= v < K.height)
    return u, v, z, inside


def project_many(points: np.ndarray, K: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection of an (n,3) camera-frame array.

    Returns an (n,3) array of (u, v, depth) and an (n,) inside-image mask.
    Raises if any point is behind the camera.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    z = points[:, 2]
    if np.any(z <= 1e-6):
        raise BehindCameraError("one or more points behind the camera")
    u = K.fx * points[:, 0] / z + K.cx
    v = K.fy * points[:, 1] / z + K.cy
    inside = (u >= 0) & (u < K.width) & (v >= 0) & (v < K.height)
    return np.column_stack([u, v, z]), inside


def back_project(u: float, v: float, s: float, K: Intrinsics) -> np.ndarray:
    """Camera-frame point of pixel (u, v) at depth s: s * K^-1 [u, v, 1]^T."""
    if s <= 0:
        raise CameraError(f"depth must be positive, got {s}")
    return np.array([s * (u - K.cx) / K.fx, s * (v - K.cy) / K.fy, s])


def back_project_many(uvs: np.ndarray, K: Intrinsics) -> np.ndarray:
    """Vectorized back-projection of an (n,3) array of (u, v, depth)."""
    uvs = np.asarray(uvs, dtype=float).reshape(-1, 3)
    if np.any(uvs[:, 2] <= 0):
        raise CameraError("depths must be positive")
    s = uvs[:, 2]
    return np.column_stack(
        [s * (uvs[:, 0] - K.cx) / K.fx, s * (uvs[:, 1] - K.cy) / K.fy, s]
    )


def camera_axes(tilt_deg: float) -> np.ndarray:
    """Rotation from camera frame to platform frame for a forward camera.

    Camera convention: z optical axis forward, x right in the image, y down.
    With zero tilt the optical axis is the platform +x axis; positive tilt
    pitches the axis upward by tilt_deg.
    """
    t = np.radians(tilt_deg)
    # Columns are the camera axes expressed in the platform frame.
    z_axis = np.array([np.cos(t), 0.0, np.sin(t)])
    x_axis = np.array([0.0, -1.0, 0.0])
    y_axis = np.cross(z_axis, x_axis)
    return np.column_stack([x_axis, y_axis, z_axis])


@dataclass
class CameraRig:
    """Camera pose in the platform frame plus its field-of-view geometry."""

    position: np.ndarray = field(default_factory=lambda: np.array([-0.30, 0.0, 0.05]))
    tilt_deg: float = 20.0
    fov_deg: tuple[float, float] = (87.0, 58.0)
    resolution: tuple[int, int] = (1280, 720)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        fw, fh = self.fov_deg
        if not (0.0 < fw < 180.0 and 0.0 < fh < 180.0):
            raise CameraError("field of view must be within (0, 180) degrees")
        self.rotation = camera_axes(self.tilt_deg)
        check_rotation(self.rotation)
        self.intrinsics = intrinsics_from_fov(self.fov_deg, self.resolution)

    def to_camera(self, points_platform: np.ndarray) -> np.ndarray:
        """Map platform-frame points into the camera frame."""
        pts = np.asarray(points_platform, dtype=float).reshape(-1, 3)
        return (pts - self.position) @ self.rotation

    def to_platform(self, points_camera: np.ndarray) -> np.ndarray:
        pts = np.asarray(points_camera, dtype=float).reshape(-1, 3)
        return pts @ self.rotation.T + self.position
