"""Deterministic closed-loop landing simulation.

One simulated clock drives everything: physics at the integrator rate,
synthetic sensing plus estimation at the camera rate, and control (FSM,
planner, PID) at the control rate. Estimates become visible to the
controller one latency interval after their frame time, modeling the
ground station's processing and transport delay in a single place.
Identical scenarios (including the seed) reproduce byte-identical logs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, asdict

import numpy as np

from .camera import CameraRig, project_many
from .control import (
    ControlCommand,
    MissionEvent,
    MissionState,
    PidController,
    PidGains,
    TouchdownDetector,
    fsm_step,
)
from .corridor import CorridorError, InfeasibleCorridorError, Vsfc, build_default_vsfc, export_csv_rows
from .datasets import NoiseParams, render_blobset
from .estimator import ESTIMATE_COLUMNS, EstimateRecord, EstimatorConfig, RelativeEstimator
from .manifold import ManifoldState, rotation_to_quaternion, yaw_rotation
from .markers import BlobSet, Constellation, default_constellation
from .metrics import compute_ate, success_rate, tracking_rmse
from .motion import GRAVITY, UgvMotion, flat_attitude
from .planner import (
    DynamicLimits,
    FlatOutput,
    NoFeasibleTimeError,
    PiecewiseBezier,
    PlannerError,
    plan_landing,
    rotate_limits,
)


class SimDivergedError(RuntimeError):
    pass


@dataclass
class QuadSim:
    """Rigid-body surrogate: double integrator with a first-order lag on
    the thrust vector standing in for the inner attitude loop."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    thrust: np.ndarray = field(default_factory=lambda: -GRAVITY.copy())
    tau_att: float = 0.15
    yaw: float = 0.0
    contact_height: float = 0.03
    landed: bool = False
    size: float = 0.18

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3).copy()
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(3).copy()
        self.thrust = np.asarray(self.thrust, dtype=float).reshape(3).copy()
        if self.tau_att <= 0:
            raise ValueError("attitude lag must be positive")

    @property
    def attitude(self) -> np.ndarray:
        """True attitude realizing the current thrust vector."""
        return flat_attitude(self.thrust + GRAVITY, self.yaw)

    def step(self, accel_cmd: np.ndarray, dt: float, ground_z: float = 0.0):
        """Semi-implicit Euler step toward the commanded net acceleration."""
        if dt > 0.005:
            raise ValueError("physics step capped at 5 ms")
        if self.landed:
            return
        f_des = np.asarray(accel_cmd, dtype=float) - GRAVITY
        self.thrust += (dt / self.tau_att) * (f_des - self.thrust)
        accel = self.thrust + GRAVITY
        self.velocity += accel * dt
        self.position += self.velocity * dt
        if not np.all(np.isfinite(self.position)):
            raise SimDivergedError("quadrotor state diverged")
        floor = ground_z + self.contact_height
        if self.position[2] <= floor and self.velocity[2] <= 0.0:
            self.position[2] = floor
            self.velocity[:] = 0.0
            self.thrust = -GRAVITY.copy()
            self.landed = True


def ugv_pose(motion: UgvMotion, t: float):
    """Platform pose in the inertial frame (position, yaw rotation)."""
    s = motion.state(t)
    return s.position, yaw_rotation(s.yaw)


@dataclass
class MissionParams:
    start_rel: tuple = (1.5, 0.0, 0.55)
    target_rel: tuple = (0.0, 0.0, 0.16)
    land_delay_s: float = 2.0
    z_touch: float = 0.08
    v_touch: float = 0.3
    touch_hold_s: float = 0.2
    motor_cut_s: float = 0.2
    descend_rate: float = 0.25
    pad_halfwidth: float = 0.215
    rel_yaw: float = 3.141592653589793


@dataclass
class CorridorParams:
    h_touchdown: float = 0.35
    dilate: float = 0.15
    shrink: float = 1.0
    robot_radius: float = 0.13
    margin: float = 0.3


@dataclass
class PlannerParams:
    degree: int = 7
    alloc_count: int = 8
    alloc_span: float = 4.0
    replan_hz: float = 10.0
    replan_threshold: float = 0.25


@dataclass
class UavParams:
    vel_limit: float = 0.9
    acc_limit: float = 4.0
    tau_att: float = 0.15


@dataclass
class RateParams:
    physics_hz: float = 1000.0
    sense_hz: float = 30.0
    control_hz: float = 100.0


@dataclass
class PlatformParams:
    mode: str = "linear"
    speed: float = 0.4
    radius: float = 2.0
    ramp_s: float = 1.5


@dataclass
class CameraParams:
    position: tuple = (-0.30, 0.0, 0.05)
    tilt_deg: float = 20.0
    fov_deg: tuple = (87.0, 58.0)
    resolution: tuple = (1280, 720)


@dataclass
class Scenario:
    seed: int = 0
    duration_s: float = 40.0
    latency_s: float = 0.040
    success_threshold: float = 0.95
    platform: PlatformParams = field(default_factory=PlatformParams)
    camera: CameraParams = field(default_factory=CameraParams)
    noise: NoiseParams = field(default_factory=NoiseParams)
    rates: RateParams = field(default_factory=RateParams)
    uav: UavParams = field(default_factory=UavParams)
    mission: MissionParams = field(default_factory=MissionParams)
    corridor: CorridorParams = field(default_factory=CorridorParams)
    planner: PlannerParams = field(default_factory=PlannerParams)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    gains: PidGains = field(default_factory=PidGains)

    def make_rig(self) -> CameraRig:
        return CameraRig(
            position=np.asarray(self.camera.position, dtype=float),
            tilt_deg=self.camera.tilt_deg,
            fov_deg=tuple(self.camera.fov_deg),
            resolution=tuple(self.camera.resolution),
        )

    def make_motion(self) -> UgvMotion:
        return UgvMotion(mode=self.platform.mode, speed=self.platform.speed,
                         radius=self.platform.radius, ramp_s=self.platform.ramp_s)


TRUTH_COLUMNS = [
    "t", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz",
    "uav_x", "uav_y", "uav_z", "uav_vx", "uav_vy", "uav_vz",
    "plat_x", "plat_y", "plat_z", "plat_yaw", "plat_vx", "plat_vy", "plat_vz",
]

CONTROL_COLUMNS = [
    "t", "state",
    "sp_px", "sp_py", "sp_pz", "sp_vx", "sp_vy", "sp_vz", "sp_ax", "sp_ay", "sp_az",
    "cmd_ax", "cmd_ay", "cmd_az", "cmd_yaw",
    "e_px", "e_py", "e_pz", "e_vx", "e_vy", "e_vz",
]


@dataclass
class RunLog:
    scenario: Scenario
    truth_rows: list = field(default_factory=list)
    estimate_rows: list = field(default_factory=list)
    control_rows: list = field(default_factory=list)
    events: list = field(default_factory=list)
    corridor_rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    est_times: list = field(default_factory=list)
    est_states: list = field(default_factory=list)
    est_truths: list = field(default_factory=list)
    est_statuses: list = field(default_factory=list)
    land_samples: list = field(default_factory=list)  # (setpoint_p, truth_p, visible)


def relative_truth(quad: QuadSim, motion: UgvMotion, t: float) -> ManifoldState:
    """True relative state seen from the platform frame."""
    s = motion.state(t)
    R_p = yaw_rotation(s.yaw)
    rel_p = R_p.T @ (quad.position - s.position)
    omega = np.array([0.0, 0.0, s.yaw_rate])
    rel_v = R_p.T @ (quad.velocity - s.velocity) - np.cross(omega, rel_p)
    rel_R = R_p.T @ quad.attitude
    return ManifoldState(rel_p, rel_R, rel_v)


def tightened_limits(scenario: Scenario, motion: UgvMotion, t0: float,
                     horizon: float, n_samples: int = 9) -> DynamicLimits:
    """Most conservative platform-frame limits over the landing horizon."""
    base = DynamicLimits(vel=[scenario.uav.vel_limit] * 3,
                         acc=[scenario.uav.acc_limit] * 3, frame="inertial")
    vel = np.full(3, np.inf)
    acc = np.full(3, np.inf)
    for t in np.linspace(t0, t0 + horizon, n_samples):
        s = motion.state(t)
        rates = np.concatenate([np.abs(s.velocity), np.abs(s.acceleration)])
        rotated = rotate_limits(base, yaw_rotation(s.yaw).T, rates)
        vel = np.minimum(vel, rotated.vel)
        acc = np.minimum(acc, rotated.acc)
    return DynamicLimits(vel=vel, acc=acc, frame="platform")


def run_scenario(scenario: Scenario) -> RunLog:
    sc = scenario
    rng = np.random.default_rng(sc.seed)
    rig = sc.make_rig()
    motion = sc.make_motion()
    constellation = default_constellation()
    estimator = RelativeEstimator(constellation, rig, sc.estimator)
    pid = PidController(sc.gains)
    detector = TouchdownDetector(sc.mission.z_touch, sc.mission.v_touch,
                                 sc.mission.touch_hold_s)
    log = RunLog(scenario=sc)

    dt = 1.0 / sc.rates.physics_hz
    sense_period = 1.0 / sc.rates.sense_hz
    control_period = 1.0 / sc.rates.control_hz
    replan_period = 1.0 / sc.planner.replan_hz if sc.planner.replan_hz > 0 else np.inf

    # Initial conditions: vehicle stationed at the relative start pose.
    plat0 = motion.state(0.0)
    R_p0 = yaw_rotation(plat0.yaw)
    start_rel = np.asarray(sc.mission.start_rel, dtype=float)
    target_rel = np.asarray(sc.mission.target_rel, dtype=float)
    omega0 = np.array([0.0, 0.0, plat0.yaw_rate])
    quad = QuadSim(
        position=plat0.position + R_p0 @ start_rel,
        velocity=plat0.velocity + R_p0 @ np.cross(omega0, start_rel),
        tau_att=sc.uav.tau_att,
        yaw=plat0.yaw + sc.mission.rel_yaw,
    )

    state = MissionState.IDLE
    pending = []  # (visible_at, EstimateRecord) latency queue
    current_est: EstimateRecord | None = None
    trajectory: PiecewiseBezier | None = None
    vsfc: Vsfc | None = None
    hold_setpoint = FlatOutput(start_rel.copy(), yaw=sc.mission.rel_yaw)
    last_setpoint = hold_setpoint
    command = ControlCommand(accel=np.zeros(3), yaw=sc.mission.rel_yaw)
    next_sense = 0.0
    next_control = 0.0
    next_replan = 0.0
    touchdown_time: float | None = None
    contact_time: float | None = None
    contact_rel: np.ndarray | None = None
    plan_failures = 0
    last_control_t: float | None = None

    def emit(t, name, detail=""):
        log.events.append((t, name, detail))

    def fire(t, event: MissionEvent):
        nonlocal state
        new_state, accepted = fsm_step(state, event)
        if accepted and new_state != state:
            emit(t, f"state:{new_state.value}", event.value)
        state = new_state
        return accepted

    n_ticks = int(round(sc.duration_s * sc.rates.physics_hz))
    status = "timeout"
    for k in range(n_ticks + 1):
        t = k * dt
        plat = motion.state(t)
        truth = relative_truth(quad, motion, t)

        # --- sensing + estimation ---
        if t + 1e-12 >= next_sense:
            next_sense += sense_period
            blobs = render_blobset(constellation, truth, rig, sc.noise, rng)
            if blobs is None:
                blobs = BlobSet.empty()
            rec = estimator.process_frame(t, blobs)
            pending.append((t + sc.latency_s, rec))
            log.estimate_rows.append(rec.csv_row())
            log.est_statuses.append(rec.status)
            if rec.valid and rec.x is not None:
                log.est_times.append(t)
                log.est_states.append(rec.x)
                log.est_truths.append(truth)

        # --- control ---
        if t + 1e-12 >= next_control:
            next_control += control_period
            while pending and pending[0][0] <= t + 1e-12:
                current_est = pending.pop(0)[1]

            est_ok = (current_est is not None and current_est.valid
                      and current_est.x is not None)
            est_fresh = est_ok and (t - current_est.t) < 0.5

            if state == MissionState.IDLE and est_fresh:
                fire(t, MissionEvent.INIT_OK)
            if state == MissionState.FOLLOW and est_fresh and t >= sc.mission.land_delay_s:
                fire(t, MissionEvent.LAND_REQUEST)
            if state in (MissionState.PLAN, MissionState.LAND) and not est_fresh:
                fire(t, MissionEvent.TRACKING_LOST)
                trajectory = None

            if state == MissionState.PLAN and est_fresh:
                try:
                    start_p = current_est.x.p
                    vsfc = build_default_vsfc(
                        start_p, target_rel, rig,
                        h_touchdown=sc.corridor.h_touchdown,
                        dilate=sc.corridor.dilate, shrink=sc.corridor.shrink,
                        robot_radius=sc.corridor.robot_radius,
                        margin=sc.corridor.margin,
                    )
                    limits = tightened_limits(
                        sc, motion, t,
                        horizon=sc.planner.alloc_span
                        * max(np.linalg.norm(target_rel - start_p)
                              / sc.uav.vel_limit, 1.0),
                    )
                    # Noisy boundary velocities must stay strictly inside
                    # the limit box or every allocation is infeasible;
                    # the start acceleration carries over from the last
                    # setpoint to keep the feedforward continuous.
                    v0 = np.clip(current_est.x.v, -0.9 * limits.vel, 0.9 * limits.vel)
                    a0 = np.clip(last_setpoint.acceleration,
                                 -0.9 * limits.acc, 0.9 * limits.acc)
                    trajectory = plan_landing(
                        FlatOutput(start_p, v0, a0,
                                   yaw=sc.mission.rel_yaw),
                        FlatOutput(target_rel, yaw=sc.mission.rel_yaw),
                        vsfc, limits, degree=sc.planner.degree, t_start=t,
                        yaw=sc.mission.rel_yaw, count=sc.planner.alloc_count,
                        span=sc.planner.alloc_span,
                    )
                    log.corridor_rows = export_csv_rows(vsfc)
                    emit(t, "plan", f"T={trajectory.total_duration:.3f}")
                    fire(t, MissionEvent.TRAJ_READY)
                    # Cooldown lets the post-plan transient settle before
                    # deviation checks resume.
                    next_replan = t + max(1.0, 2.0 * replan_period)
                    plan_failures = 0
                except (CorridorError, PlannerError, NoFeasibleTimeError) as exc:
                    plan_failures += 1
                    emit(t, "plan-failed", str(exc))
                    if trajectory is not None:
                        # Keep flying the previous profile; it still ends
                        # on the pad.
                        state = MissionState.LAND
                    elif plan_failures >= 3:
                        fire(t, MissionEvent.ABORT)
                    else:
                        state = MissionState.FOLLOW

            # Setpoint selection.
            if state == MissionState.LAND and trajectory is not None:
                if t <= trajectory.t_end:
                    setpoint = trajectory.eval(t)
                else:
                    # Past the corridor-constrained profile: slow descent
                    # until the touchdown detector fires.
                    sink = sc.mission.descend_rate * (t - trajectory.t_end)
                    end = trajectory.eval(trajectory.t_end)
                    setpoint = FlatOutput(
                        end.position - np.array([0.0, 0.0, sink]),
                        np.array([0.0, 0.0, -sc.mission.descend_rate]),
                        np.zeros(3), yaw=sc.mission.rel_yaw,
                    )
                # Replan when the estimate diverges from the reference,
                # comparing at the estimate's own timestamp so transport
                # latency does not masquerade as tracking error.
                if (est_fresh and t >= next_replan and t < trajectory.t_end):
                    next_replan = t + replan_period
                    ref = trajectory.eval(current_est.t)
                    deviation = np.linalg.norm(current_est.x.p - ref.position)
                    if deviation > sc.planner.replan_threshold:
                        state = MissionState.PLAN
                        emit(t, "replan", f"deviation={deviation:.3f}")
            elif state == MissionState.TOUCHDOWN:
                setpoint = FlatOutput(
                    np.array([target_rel[0], target_rel[1], 0.0]),
                    np.array([0.0, 0.0, -sc.mission.descend_rate]),
                    np.zeros(3), yaw=sc.mission.rel_yaw,
                )
            else:
                setpoint = hold_setpoint

            # Touchdown detection runs on the estimate, as on the real
            # ground station.
            if state == MissionState.LAND and est_fresh:
                if detector.update(t, current_est.x):
                    fire(t, MissionEvent.TOUCHDOWN_DETECTED)
                    touchdown_time = t
            if state == MissionState.TOUCHDOWN and touchdown_time is not None:
                # Cut motors only once physical contact happened and the
                # hold delay elapsed; a premature detection keeps sinking.
                if quad.landed and t - touchdown_time >= sc.mission.motor_cut_s:
                    fire(t, MissionEvent.MOTOR_CUT)
                    emit(t, "motor-cut")

            # PID on the latest visible estimate.
            dt_ctrl = control_period if last_control_t is None else max(
                t - last_control_t, 1e-6)
            last_control_t = t
            last_setpoint = setpoint
            if est_ok:
                cmd = pid.step(setpoint, current_est.x, dt_ctrl)
            else:
                cmd = ControlCommand(accel=np.zeros(3), yaw=sc.mission.rel_yaw)
            command = cmd
            e_p = (setpoint.position - current_est.x.p) if est_ok else np.zeros(3)
            e_v = (setpoint.velocity - current_est.x.v) if est_ok else np.zeros(3)
            log.control_rows.append(
                [t, state.value, *setpoint.position, *setpoint.velocity,
                 *setpoint.acceleration, *cmd.accel, cmd.yaw, *e_p, *e_v]
            )
            if state == MissionState.LAND:
                cam_pts = rig.to_camera((truth.p).reshape(1, 3))
                visible = False
                if cam_pts[0, 2] > 1e-6:
                    _, inside = project_many(cam_pts, rig.intrinsics)
                    visible = bool(inside[0])
                log.land_samples.append(
                    (setpoint.position.copy(), truth.p.copy(), visible)
                )

        # --- physics ---
        if not quad.landed:
            R_p = yaw_rotation(plat.yaw)
            accel_I = R_p @ command.accel
            quad.yaw = plat.yaw + command.yaw
            quad.step(accel_I, dt)
            if quad.landed:
                contact_time = t
                contact_rel = relative_truth(quad, motion, t).p.copy()
                emit(t, "contact", f"rel=({contact_rel[0]:.3f},{contact_rel[1]:.3f})")
        else:
            # Resting on the pad: ride along with the platform.
            R_p = yaw_rotation(plat.yaw)
            quad.position = plat.position + R_p @ contact_rel
            quad.velocity = plat.velocity + R_p @ np.cross(
                np.array([0.0, 0.0, plat.yaw_rate]), contact_rel)

        q = rotation_to_quaternion(truth.R)
        log.truth_rows.append(
            [t, *truth.p, *q, *truth.v, *quad.position, *quad.velocity,
             *plat.position, plat.yaw, *plat.velocity]
        )

        if state == MissionState.SHUTDOWN:
            status = "shutdown"
            break
        if quad.landed and contact_time is not None and t - contact_time > 1.0:
            status = "landed-no-shutdown"
            break

    _summarize(log, status, contact_time, contact_rel)
    return log


def _summarize(log: RunLog, status: str, contact_time, contact_rel):
    sc = log.scenario
    summary = {}
    summary["seed"] = sc.seed
    summary["status"] = status
    landed = contact_rel is not None
    on_pad = bool(
        landed and max(abs(contact_rel[0]), abs(contact_rel[1])) <= sc.mission.pad_halfwidth
    )
    touchdown_err = (
        float(np.hypot(contact_rel[0], contact_rel[1])) if landed else float("nan")
    )
    summary["landed"] = int(landed)
    summary["on_pad"] = int(on_pad)
    summary["touchdown_time"] = float(contact_time) if contact_time is not None else float("nan")
    summary["touchdown_err_m"] = touchdown_err
    summary["touchdown_x"] = float(contact_rel[0]) if landed else float("nan")
    summary["touchdown_y"] = float(contact_rel[1]) if landed else float("nan")
    try:
        ate_t, ate_r = compute_ate(log.est_times, log.est_states,
                                   log.est_times, log.est_truths)
    except Exception:
        ate_t, ate_r = float("nan"), float("nan")
    summary["ate_translation"] = ate_t
    summary["ate_rotation"] = ate_r
    summary["success_rate"] = success_rate(log.est_statuses)
    if log.land_samples:
        sp = np.array([s[0] for s in log.land_samples])
        tr = np.array([s[1] for s in log.land_samples])
        summary["tracking_rmse_m"] = tracking_rmse(sp, tr)
        summary["visibility"] = float(np.mean([s[2] for s in log.land_samples]))
    else:
        summary["tracking_rmse_m"] = float("nan")
        summary["visibility"] = float("nan")
    summary["frames"] = len(log.est_statuses)
    summary["mission_success"] = int(landed and on_pad and status in
                                     ("shutdown", "landed-no-shutdown"))
    log.summary = summary


def _format_cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_runlog(log: RunLog, out_dir):
    """Persist the five RunLog CSVs plus the corridor export."""
    import os

    os.makedirs(out_dir, exist_ok=True)

    def dump(name, header, rows):
        with open(os.path.join(out_dir, name), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow([_format_cell(c) for c in row])

    dump("truth.csv", TRUTH_COLUMNS, log.truth_rows)
    dump("estimate.csv", ESTIMATE_COLUMNS, log.estimate_rows)
    dump("control.csv", CONTROL_COLUMNS, log.control_rows)
    dump("events.csv", ["t", "event", "detail"], log.events)
    if log.corridor_rows:
        dump("corridor.csv", ["cell", "a_x", "a_y", "a_z", "b"], log.corridor_rows)
    with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["key", "value"])
        for key, value in log.summary.items():
            writer.writerow([key, _format_cell(value)])
