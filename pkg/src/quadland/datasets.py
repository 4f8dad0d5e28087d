"""Synthetic sensing and estimation-only datasets.

Renders ideal marker blobs from a relative pose with configurable pixel,
depth, and hue noise, and generates the three estimation scenarios used
for evaluation: static camera with the vehicle flying a block path,
camera on a translating block-path platform, and camera on a circling
platform with the vehicle station-keeping. Datasets round-trip through a
one-row-per-blob replay CSV that carries the ground truth alongside.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .camera import CameraRig, project_many
from .manifold import (
    ManifoldState,
    quaternion_to_rotation,
    rotation_to_quaternion,
    yaw_rotation,
)
from .markers import BlobSet, Constellation, default_constellation
from .motion import GRAVITY, UgvMotion, flat_attitude


@dataclass
class NoiseParams:
    pixel_px: float = 0.5
    depth_frac: float = 0.01
    hue_deg: float = 3.0

    @classmethod
    def zero(cls) -> "NoiseParams":
        return cls(0.0, 0.0, 0.0)


@dataclass
class FrameSample:
    t: float
    blobs: BlobSet
    truth: ManifoldState


def render_blobset(constellation: Constellation, x_rel: ManifoldState,
                   rig: CameraRig, noise: NoiseParams,
                   rng: np.random.Generator | None = None,
                   gray: float = 200.0) -> BlobSet | None:
    """Ideal marker projections with sensor noise; None if any marker is
    outside the image or behind the camera."""
    pts_platform = constellation.points @ x_rel.R.T + x_rel.p
    cam = rig.to_camera(pts_platform)
    if np.any(cam[:, 2] <= 1e-6):
        return None
    uvs, inside = project_many(cam, rig.intrinsics)
    if not np.all(inside):
        return None
    uv = uvs[:, :2]
    depth = uvs[:, 2]
    hue = constellation.hues.copy()
    if rng is not None:
        if noise.pixel_px > 0:
            uv = uv + rng.normal(0.0, noise.pixel_px, size=uv.shape)
        if noise.depth_frac > 0:
            depth = depth * (1.0 + rng.normal(0.0, noise.depth_frac, size=depth.shape))
        if noise.hue_deg > 0:
            hue = (hue + rng.normal(0.0, noise.hue_deg, size=hue.shape)) % 360.0
    radius = 0.008 * rig.intrinsics.fx / np.maximum(depth, 1e-6)
    return BlobSet(uv, np.maximum(depth, 1e-3), hue, radius)


def _quintic_path(waypoints, edge_duration):
    """Closed-form block path: rest-to-rest quintic per edge."""
    wps = [np.asarray(w, dtype=float) for w in waypoints]

    def eval_at(t: float):
        T = edge_duration
        if t <= 0:
            return wps[0].copy(), np.zeros(3), np.zeros(3)
        k = int(np.floor(t / T))
        if k >= len(wps) - 1:
            return wps[-1].copy(), np.zeros(3), np.zeros(3)
        a, b = wps[k], wps[k + 1]
        tau = (t - k * T) / T
        s = 10 * tau**3 - 15 * tau**4 + 6 * tau**5
        ds = (30 * tau**2 - 60 * tau**3 + 30 * tau**4) / T
        dds = (60 * tau - 180 * tau**2 + 120 * tau**3) / T**2
        d = b - a
        return a + d * s, d * ds, d * dds

    return eval_at


def _relative_truth(platform, rel_pos, rel_vel, rel_acc, rel_yaw):
    """Relative state plus the inertial acceleration needed to fly it."""
    omega = np.array([0.0, 0.0, platform.yaw_rate])
    R_p = platform.rotation
    coriolis = 2.0 * np.cross(omega, rel_vel)
    centrifugal = np.cross(omega, np.cross(omega, rel_pos))
    a_inertial = platform.acceleration + R_p @ (rel_acc + coriolis + centrifugal)
    R_body_inertial = flat_attitude(a_inertial, platform.yaw + rel_yaw)
    R_rel = R_p.T @ R_body_inertial
    return ManifoldState(rel_pos, R_rel, rel_vel), a_inertial


def generate_dataset(kind: str, seed: int, duration: float = 24.0,
                     rate: float = 30.0, noise: NoiseParams | None = None,
                     constellation: Constellation | None = None,
                     rig: CameraRig | None = None) -> list:
    """Frame samples for one of the evaluation scenarios.

    kind: 'static' (camera still, vehicle block path spanning the working
    range), 'moving' (camera on a translating block-path platform),
    'circular' (camera on a circling platform, vehicle station-keeping
    with a gentle relative sweep).
    """
    noise = noise if noise is not None else NoiseParams()
    constellation = constellation or default_constellation()
    rig = rig or CameraRig()
    rng = np.random.default_rng(seed)

    if kind == "static":
        platform = UgvMotion(mode="static")
        rel_path = _quintic_path(
            [
                [0.45, 0.00, 0.35],
                [1.60, 0.35, 0.75],
                [2.90, -0.10, 1.05],
                [1.60, -0.40, 0.45],
                [0.45, 0.00, 0.35],
            ],
            edge_duration=duration / 4.0,
        )
    elif kind == "moving":
        platform = UgvMotion(
            mode="block",
            waypoints=[[0, 0, 0], [1.6, 0, 0], [1.6, 1.6, 0], [0, 1.6, 0], [0, 0, 0]],
            edge_duration=duration / 4.0,
        )
        rel_path = _quintic_path(
            [
                [0.70, 0.00, 0.40],
                [2.40, 0.25, 0.95],
                [0.70, -0.25, 0.55],
                [2.40, 0.00, 0.40],
                [0.70, 0.00, 0.40],
            ],
            edge_duration=duration / 4.0,
        )
    elif kind == "circular":
        platform = UgvMotion(mode="circular", speed=0.9, radius=2.0)
        rel_path = _quintic_path(
            [
                [1.50, 0.00, 0.55],
                [1.70, 0.10, 0.65],
                [1.35, -0.10, 0.48],
                [1.50, 0.00, 0.55],
            ],
            edge_duration=duration / 3.0,
        )
    else:
        raise ValueError(f"unknown dataset kind {kind!r}")

    samples = []
    n_frames = int(duration * rate)
    for k in range(n_frames):
        t = k / rate
        plat = platform.state(t)
        rel_pos, rel_vel, rel_acc = rel_path(t)
        truth, _ = _relative_truth(plat, rel_pos, rel_vel, rel_acc, np.pi)
        blobs = render_blobset(constellation, truth, rig, noise, rng)
        if blobs is None:
            continue
        samples.append(FrameSample(t=t, blobs=blobs, truth=truth))
    return samples


REPLAY_COLUMNS = [
    "t", "u", "v", "s", "hue", "gray",
    "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz",
]


def write_replay(path, samples: list, gray: float = 200.0):
    """One CSV row per blob; ground truth repeated on each row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPLAY_COLUMNS)
        for s in samples:
            q = rotation_to_quaternion(s.truth.R)
            truth_cols = [*s.truth.p, *q, *s.truth.v]
            for i in range(len(s.blobs)):
                writer.writerow(
                    [repr(float(s.t)), repr(float(s.blobs.uv[i, 0])),
                     repr(float(s.blobs.uv[i, 1])), repr(float(s.blobs.depth[i])),
                     repr(float(s.blobs.hue[i])), repr(float(gray))]
                    + [repr(float(c)) for c in truth_cols]
                )


class ReplayFormatError(ValueError):
    pass


def read_replay(path) -> list:
    """Parse a replay CSV back into frame samples grouped by timestamp."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:6] != REPLAY_COLUMNS[:6]:
            raise ReplayFormatError("replay header mismatch")
        if header != REPLAY_COLUMNS:
            raise ReplayFormatError("replay is missing ground-truth columns")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(REPLAY_COLUMNS):
                raise ReplayFormatError(f"line {lineno}: expected "
                                        f"{len(REPLAY_COLUMNS)} fields, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise ReplayFormatError(f"line {lineno}: {exc}") from exc

    samples = []
    current_t = None
    bucket = []
    for row in rows:
        if current_t is None or abs(row[0] - current_t) > 1e-9:
            if bucket:
                samples.append(_bucket_to_sample(current_t, bucket))
            current_t = row[0]
            bucket = []
        bucket.append(row)
    if bucket:
        samples.append(_bucket_to_sample(current_t, bucket))
    return samples


def _bucket_to_sample(t: float, rows: list) -> FrameSample:
    arr = np.array(rows)
    blobs = BlobSet(arr[:, 1:3], arr[:, 3], arr[:, 4],
                    np.full(len(rows), 3.0))
    truth = ManifoldState(arr[0, 6:9], quaternion_to_rotation(arr[0, 9:13]),
                          arr[0, 13:16])
    return FrameSample(t=t, blobs=blobs, truth=truth)
