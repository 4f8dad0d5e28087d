"""Per-frame estimation front-end.

Drives the marker pipeline and the filter: brute-force initialization on
the first usable frame, correspondence tracking afterwards, and the
iterated update fusing reprojection and velocity factors. Five
consecutive failed frames trigger re-initialization. A filter-free
baseline (pose from per-frame PnP only) shares the same tracking code for
comparison studies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import CameraRig
from .iekf import (
    Belief,
    MeasNoise,
    PixelFactor,
    ProcessNoise,
    StalePredictionError,
    VelocityFactor,
    VelPrefilter,
    predict,
    update,
)
from .manifold import ManifoldState, rotation_to_quaternion
from .markers import (
    BlobSet,
    Constellation,
    TrackingLost,
    initialize,
    track_correspondence,
)
from .pnp import DegenerateConfigError, PnpError, epnp, refine_gn, reprojection_error


@dataclass
class EstimatorConfig:
    # The velocity pseudo-measurement is a lagged backward difference;
    # overweighting it (small sigma_vel, heavy IIR) drags the position
    # estimate behind fast motion, hence the looser defaults here.
    sigma_rot: float = 1.0
    sigma_thrust: float = 1.0
    sigma_acc_floor: float = 1.0
    sigma_px: float = 1.0
    sigma_vel: float = 0.3
    iir_alpha: float = 0.6
    lambda_mad: float = 0.05
    hue_tol: float = 30.0
    eps_rms_px: float = 2.0       # per-marker RMS success gate
    reinit_after: int = 5
    max_iter: int = 10
    gn_tol: float = 1e-6
    init_pos_std: float = 0.05
    init_rot_std: float = 0.1
    init_vel_std: float = 0.5


@dataclass
class EstimateRecord:
    t: float
    x: ManifoldState | None
    trace_P: float
    eps: float
    iterations: int
    status: str  # init / tracked / lost / skipped

    @property
    def valid(self) -> bool:
        return self.status in ("init", "tracked")

    def csv_row(self) -> list:
        if self.x is None:
            pose = [np.nan] * 10
        else:
            q = rotation_to_quaternion(self.x.R)
            pose = [*self.x.p, *q, *self.x.v]
        return [self.t, *pose, self.trace_P, self.eps, self.iterations, self.status]


ESTIMATE_COLUMNS = [
    "t", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz",
    "trace_P", "eps", "iterations", "status",
]


def pose_from_pnp(R_cam: np.ndarray, t_cam: np.ndarray, rig: CameraRig):
    """Camera-frame pose to platform-frame pose."""
    R = rig.rotation @ R_cam
    p = rig.rotation @ t_cam + rig.position
    return R, p


class RelativeEstimator:
    """Stateful estimator: one instance per camera stream."""

    def __init__(self, constellation: Constellation, rig: CameraRig,
                 config: EstimatorConfig | None = None):
        self.constellation = constellation
        self.rig = rig
        self.config = config or EstimatorConfig()
        self.process_noise = ProcessNoise(self.config.sigma_rot, self.config.sigma_thrust,
                                          self.config.sigma_acc_floor)
        self.meas_noise = MeasNoise(self.config.sigma_px, self.config.sigma_vel)
        self.belief: Belief | None = None
        self.prefilter = VelPrefilter(alpha=self.config.iir_alpha)
        self.last_time: float | None = None
        self.failed_frames = 0

    @property
    def initialized(self) -> bool:
        return self.belief is not None

    def reset(self):
        self.belief = None
        self.prefilter.reset()
        self.last_time = None
        self.failed_frames = 0

    def _fail(self, t: float, status: str) -> EstimateRecord:
        self.failed_frames += 1
        if self.failed_frames >= self.config.reinit_after:
            self.reset()
        return EstimateRecord(t, None if self.belief is None else self.belief.x.copy(),
                              np.nan, np.inf, 0, status)

    def _try_initialize(self, t: float, blobs: BlobSet) -> EstimateRecord:
        cfg = self.config
        ok, corr = initialize(self.constellation, blobs, self.rig.intrinsics,
                              lambda_mad=cfg.lambda_mad, hue_tol=cfg.hue_tol)
        if not ok:
            return EstimateRecord(t, None, np.nan, np.inf, 0, "lost")
        try:
            sol = epnp(self.constellation.points, corr.pixels, self.rig.intrinsics)
            sol = refine_gn(sol, self.constellation.points, corr.pixels,
                            self.rig.intrinsics)
        except (PnpError, DegenerateConfigError):
            return EstimateRecord(t, None, np.nan, np.inf, 0, "lost")
        R, p = pose_from_pnp(sol.R, sol.t, self.rig)
        x = ManifoldState(p, R, np.zeros(3))
        P0 = np.diag(
            [cfg.init_pos_std**2] * 3 + [cfg.init_rot_std**2] * 3
            + [cfg.init_vel_std**2] * 3
        )
        self.belief = Belief(x, P0)
        self.prefilter.reset()
        self.prefilter.push(p, t)
        self.last_time = t
        self.failed_frames = 0
        return EstimateRecord(t, x.copy(), float(np.trace(P0)), sol.eps, 0, "init")

    def process_frame(self, t: float, blobs: BlobSet) -> EstimateRecord:
        cfg = self.config
        if self.belief is None:
            return self._try_initialize(t, blobs)

        dt = t - (self.last_time if self.last_time is not None else t)
        try:
            prior = predict(self.belief, dt, self.process_noise)
        except StalePredictionError:
            self.reset()
            return self._try_initialize(t, blobs)

        try:
            corr, _ = track_correspondence(
                self.constellation, prior.x, blobs, self.rig.intrinsics,
                self.rig.position, self.rig.rotation,
            )
        except TrackingLost:
            self.belief = prior
            self.last_time = t
            return self._fail(t, "lost")

        factors = [
            PixelFactor(self.constellation.points, corr.pixels, self.rig.intrinsics,
                        self.rig.position, self.rig.rotation, cfg.sigma_px)
        ]
        v_meas = self.prefilter.measurement()
        if v_meas is not None:
            factors.append(VelocityFactor(v_meas, cfg.sigma_vel))

        posterior, info = update(prior, factors, max_iter=cfg.max_iter,
                                 tol=cfg.gn_tol)
        R_pose = self.rig.rotation.T @ posterior.x.R
        t_pose = self.rig.rotation.T @ (posterior.x.p - self.rig.position)
        try:
            eps = reprojection_error(R_pose, t_pose, self.constellation.points,
                                     corr.pixels, self.rig.intrinsics)
        except PnpError:
            eps = np.inf
        rms = np.sqrt(eps / len(self.constellation)) if np.isfinite(eps) else np.inf

        if info.status == "skipped" or rms > cfg.eps_rms_px:
            self.belief = prior
            self.last_time = t
            return self._fail(t, "skipped")

        self.belief = posterior
        self.last_time = t
        self.failed_frames = 0
        self.prefilter.push(posterior.x.p, t)
        return EstimateRecord(t, posterior.x.copy(), float(np.trace(posterior.P)),
                              eps, info.iterations, "tracked")


class PnpOnlyEstimator:
    """Filter-free baseline: per-frame PnP pose, finite-difference velocity.

    Shares initialization and tracking with the filtered pipeline so the
    comparison isolates the filtering itself.
    """

    def __init__(self, constellation: Constellation, rig: CameraRig,
                 config: EstimatorConfig | None = None):
        self.constellation = constellation
        self.rig = rig
        self.config = config or EstimatorConfig()
        self.state: ManifoldState | None = None
        self.last_time: float | None = None
        self.failed_frames = 0

    @property
    def initialized(self) -> bool:
        return self.state is not None

    def reset(self):
        self.state = None
        self.last_time = None
        self.failed_frames = 0

    def process_frame(self, t: float, blobs: BlobSet) -> EstimateRecord:
        cfg = self.config
        if self.state is None:
            ok, corr = initialize(self.constellation, blobs, self.rig.intrinsics,
                                  lambda_mad=cfg.lambda_mad, hue_tol=cfg.hue_tol)
            if not ok:
                return EstimateRecord(t, None, np.nan, np.inf, 0, "lost")
        else:
            try:
                corr, _ = track_correspondence(
                    self.constellation, self.state, blobs, self.rig.intrinsics,
                    self.rig.position, self.rig.rotation,
                )
            except TrackingLost:
                self.failed_frames += 1
                if self.failed_frames >= cfg.reinit_after:
                    self.reset()
                return EstimateRecord(t, self.state, np.nan, np.inf, 0, "lost")

        try:
            sol = epnp(self.constellation.points, corr.pixels, self.rig.intrinsics)
            sol = refine_gn(sol, self.constellation.points, corr.pixels,
                            self.rig.intrinsics)
        except (PnpError, DegenerateConfigError):
            self.failed_frames += 1
            if self.failed_frames >= cfg.reinit_after:
                self.reset()
            return EstimateRecord(t, self.state, np.nan, np.inf, 0, "lost")

        R, p = pose_from_pnp(sol.R, sol.t, self.rig)
        v = np.zeros(3)
        if self.state is not None and self.last_time is not None and t > self.last_time:
            v = (p - self.state.p) / (t - self.last_time)
        status = "tracked" if self.state is not None else "init"
        rms = np.sqrt(sol.eps / len(self.constellation))
        if rms > cfg.eps_rms_px:
            self.failed_frames += 1
            if self.failed_frames >= cfg.reinit_after:
                self.reset()
            return EstimateRecord(t, self.state, np.nan, sol.eps, sol.iterations, "skipped")
        self.state = ManifoldState(p, R, v)
        self.last_time = t
        self.failed_frames = 0
        return EstimateRecord(t, self.state.copy(), np.nan, sol.eps,
                              sol.iterations, status)
