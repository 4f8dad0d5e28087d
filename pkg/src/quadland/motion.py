"""Platform (UGV) motion profiles and flat-output attitude helpers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .manifold import yaw_rotation

GRAVITY = np.array([0.0, 0.0, -9.81])


def smoothstep(tau: float) -> tuple[float, float, float]:
    """Value, first, and second derivative of 3 tau^2 - 2 tau^3 on [0, 1]."""
    if tau <= 0.0:
        return 0.0, 0.0, 0.0
    if tau >= 1.0:
        return 1.0, 0.0, 0.0
    return (
        3 * tau**2 - 2 * tau**3,
        6 * tau - 6 * tau**2,
        6 - 12 * tau,
    )


def ramped_arclength(t: float, speed: float, t_ramp: float) -> tuple[float, float, float]:
    """Distance, speed, acceleration along a path whose speed follows a
    smoothstep ramp from rest to the target speed."""
    if t <= 0.0:
        return 0.0, 0.0, 0.0
    if t >= t_ramp:
        return speed * (t_ramp / 2.0 + (t - t_ramp)), speed, 0.0
    tau = t / t_ramp
    s = speed * t_ramp * (tau**3 - tau**4 / 2.0)
    v, dv, _ = smoothstep(tau)
    return s, speed * v, speed * dv / t_ramp


@dataclass
class PlatformState:
    position: np.ndarray
    yaw: float
    velocity: np.ndarray
    acceleration: np.ndarray
    yaw_rate: float = 0.0

    @property
    def rotation(self) -> np.ndarray:
        """Platform-to-inertial rotation (pure yaw; the pad stays level)."""
        return yaw_rotation(self.yaw)


@dataclass
class UgvMotion:
    """Prescribed landing-platform motion in the inertial frame.

    Modes: 'static'; 'linear' (straight line along +x with a smooth speed
    ramp); 'circular' (constant-radius arc, heading tangent, same ramp);
    'block' (rest-to-rest quintic edges through waypoints, fixed heading).
    """

    mode: str = "static"
    speed: float = 0.0
    radius: float = 2.0
    ramp_s: float = 1.5
    waypoints: list = field(default_factory=list)
    edge_duration: float = 4.0
    platform_size: float = 0.43

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("platform speed must be non-negative")
        if self.mode not in ("static", "linear", "circular", "block"):
            raise ValueError(f"unknown platform mode {self.mode!r}")
        if self.mode == "circular" and self.radius <= 0:
            raise ValueError("circular mode needs a positive radius")
        if self.mode == "block" and len(self.waypoints) < 2:
            raise ValueError("block mode needs at least two waypoints")

    def state(self, t: float) -> PlatformState:
        if self.mode == "static" or self.speed == 0.0 and self.mode != "block":
            return PlatformState(np.zeros(3), 0.0, np.zeros(3), np.zeros(3))
        if self.mode == "linear":
            s, v, a = ramped_arclength(t, self.speed, self.ramp_s)
            return PlatformState(
                np.array([s, 0.0, 0.0]), 0.0,
                np.array([v, 0.0, 0.0]), np.array([a, 0.0, 0.0]),
            )
        if self.mode == "circular":
            s, v, a = ramped_arclength(t, self.speed, self.ramp_s)
            theta = s / self.radius
            omega = v / self.radius
            pos = np.array(
                [self.radius * np.sin(theta), self.radius * (1 - np.cos(theta)), 0.0]
            )
            tangent = np.array([np.cos(theta), np.sin(theta), 0.0])
            normal = np.array([-np.sin(theta), np.cos(theta), 0.0])
            return PlatformState(
                pos, theta, v * tangent, a * tangent + (v * v / self.radius) * normal,
                yaw_rate=omega,
            )
        # block: quintic rest-to-rest edges, heading fixed at zero.
        return self._block_state(t)

    def _block_state(self, t: float) -> PlatformState:
        wps = [np.asarray(w, dtype=float) for w in self.waypoints]
        T = self.edge_duration
        if t < 0:
            return PlatformState(wps[0], 0.0, np.zeros(3), np.zeros(3))
        k = int(np.floor(t / T))
        if k >= len(wps) - 1:
            return PlatformState(wps[-1], 0.0, np.zeros(3), np.zeros(3))
        a, b = wps[k], wps[k + 1]
        tau = (t - k * T) / T
        s = 10 * tau**3 - 15 * tau**4 + 6 * tau**5
        ds = (30 * tau**2 - 60 * tau**3 + 30 * tau**4) / T
        dds = (60 * tau - 180 * tau**2 + 120 * tau**3) / T**2
        d = b - a
        return PlatformState(a + d * s, 0.0, d * ds, d * dds)


def flat_attitude(accel_inertial: np.ndarray, yaw: float) -> np.ndarray:
    """Attitude whose thrust direction realizes the given acceleration.

    Differential flatness: body z aligns with (a - g); body x follows the
    yaw heading projected onto the plane normal to body z.
    """
    thrust = np.asarray(accel_inertial, dtype=float) - GRAVITY
    norm = np.linalg.norm(thrust)
    if norm < 1e-6:
        raise ValueError("free-fall attitude is undefined")
    z_b = thrust / norm
    x_c = np.array([np.cos(yaw), np.sin(yaw), 0.0])
    y_b = np.cross(z_b, x_c)
    ny = np.linalg.norm(y_b)
    if ny < 1e-6:
        raise ValueError("yaw heading parallel to thrust")
    y_b = y_b / ny
    x_b = np.cross(y_b, z_b)
    return np.column_stack([x_b, y_b, z_b])
