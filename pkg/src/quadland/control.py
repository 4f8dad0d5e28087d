"""Outer-loop PID tracking and the mission state machine.

The controller turns trajectory setpoints and state estimates into
acceleration commands with feedforward, integral anti-windup, and output
clamping. The mission progresses through a fixed six-state machine; any
in-flight tracking loss falls back to re-acquisition.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .manifold import ManifoldState
from .planner import FlatOutput


@dataclass
class PidGains:
    # Soft defaults: the estimate reaching the controller is 70-110 ms
    # old and the attitude loop adds ~0.15 s lag; stiffer gains oscillate.
    kp: np.ndarray = field(default_factory=lambda: np.array([4.0, 4.0, 4.0]))
    ki: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.0, 1.0]))
    kd: np.ndarray = field(default_factory=lambda: np.array([4.5, 4.5, 4.5]))
    integral_clamp: float = 1.0     # m*s
    output_clamp: float = 8.0       # m/s^2
    feedforward: bool = True

    def __post_init__(self):
        self.kp = np.asarray(self.kp, dtype=float).reshape(3)
        self.ki = np.asarray(self.ki, dtype=float).reshape(3)
        self.kd = np.asarray(self.kd, dtype=float).reshape(3)
        if np.any(self.kp < 0) or np.any(self.ki < 0) or np.any(self.kd < 0):
            raise ValueError("gains must be non-negative")
        if self.integral_clamp <= 0 or self.output_clamp <= 0:
            raise ValueError("clamps must be positive")


@dataclass
class ControlCommand:
    """Desired acceleration in the platform frame plus a yaw setpoint."""

    accel: np.ndarray
    yaw: float = 0.0


class PidController:
    """Position/velocity PID with acceleration feedforward."""

    def __init__(self, gains: PidGains | None = None):
        self.gains = gains or PidGains()
        self.integral = np.zeros(3)

    def reset(self):
        self.integral = np.zeros(3)

    def step(self, setpoint: FlatOutput, state: ManifoldState, dt: float) -> ControlCommand:
        if dt <= 0:
            raise ValueError("dt must be positive")
        g = self.gains
        e_p = setpoint.position - state.p
        e_v = setpoint.velocity - state.v
        self.integral = np.clip(self.integral + e_p * dt,
                                -g.integral_clamp, g.integral_clamp)
        accel = g.kp * e_p + g.ki * self.integral + g.kd * e_v
        if g.feedforward:
            accel = accel + setpoint.acceleration
        norm = np.linalg.norm(accel)
        if norm > g.output_clamp:
            accel = accel * (g.output_clamp / norm)
        return ControlCommand(accel=accel, yaw=setpoint.yaw)


class MissionState(Enum):
    IDLE = "idle"
    FOLLOW = "follow"
    PLAN = "plan"
    LAND = "land"
    TOUCHDOWN = "touchdown"
    SHUTDOWN = "shutdown"


class MissionEvent(Enum):
    INIT_OK = "init-ok"
    LAND_REQUEST = "land-request"
    TRAJ_READY = "traj-ready"
    TOUCHDOWN_DETECTED = "touchdown-detected"
    TRACKING_LOST = "tracking-lost"
    MOTOR_CUT = "motor-cut"
    ABORT = "abort"


# (state, event) -> next state; undefined pairs leave the state unchanged.
TRANSITIONS = {
    (MissionState.IDLE, MissionEvent.INIT_OK): MissionState.FOLLOW,
    (MissionState.FOLLOW, MissionEvent.LAND_REQUEST): MissionState.PLAN,
    (MissionState.PLAN, MissionEvent.TRAJ_READY): MissionState.LAND,
    (MissionState.LAND, MissionEvent.TOUCHDOWN_DETECTED): MissionState.TOUCHDOWN,
    (MissionState.TOUCHDOWN, MissionEvent.MOTOR_CUT): MissionState.SHUTDOWN,
    (MissionState.FOLLOW, MissionEvent.TRACKING_LOST): MissionState.FOLLOW,
    (MissionState.PLAN, MissionEvent.TRACKING_LOST): MissionState.FOLLOW,
    (MissionState.LAND, MissionEvent.TRACKING_LOST): MissionState.FOLLOW,
    (MissionState.IDLE, MissionEvent.ABORT): MissionState.SHUTDOWN,
    (MissionState.FOLLOW, MissionEvent.ABORT): MissionState.SHUTDOWN,
    (MissionState.PLAN, MissionEvent.ABORT): MissionState.SHUTDOWN,
    (MissionState.LAND, MissionEvent.ABORT): MissionState.SHUTDOWN,
    (MissionState.TOUCHDOWN, MissionEvent.ABORT): MissionState.SHUTDOWN,
}


def fsm_step(state: MissionState, event: MissionEvent) -> tuple[MissionState, bool]:
    """Pure transition function; returns (next state, accepted flag).

    Rejected (state, event) pairs keep the state unchanged so callers can
    log a warning without corrupting the mission.
    """
    key = (state, event)
    if key in TRANSITIONS:
        return TRANSITIONS[key], True
    return state, False


@dataclass
class TouchdownDetector:
    """Relative height below z_touch and speed below v_touch, sustained
    for hold_s seconds."""

    z_touch: float = 0.08
    v_touch: float = 0.3
    hold_s: float = 0.2
    _since: float | None = None

    def update(self, t: float, state: ManifoldState) -> bool:
        low = state.p[2] < self.z_touch and np.linalg.norm(state.v) < self.v_touch
        if not low:
            self._since = None
            return False
        if self._since is None:
            self._since = t
        return (t - self._since) >= self.hold_s

    def reset(self):
        self._since = None
