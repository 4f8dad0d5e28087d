"""LED-blob extraction, correspondence initialization, and tracking.

Detection candidates come either from a dense (gray, depth, hue) pixel
grid or directly as a sparse blob list; the closed-loop simulator uses the
sparse path, the grid path serves image-style inputs. Initialization
brute-forces candidate permutations behind a shape (mean-absolute-
deviation) gate and a hue gate; tracking matches predicted marker
projections to new candidates after removing the cluster's common 2D
shift.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations

import numpy as np
from scipy import ndimage

from .camera import Intrinsics, back_project_many, project_many
from .manifold import ManifoldState, exp_so3
from .pnp import DegenerateConfigError, PnpError, PnpSolution, epnp, refine_gn, reprojection_error


class MarkerError(ValueError):
    pass


class TrackingLost(RuntimeError):
    """Matching failed; caller should re-initialize."""


@dataclass
class Constellation:
    """Body-frame marker positions (m) with one hue per marker."""

    points: np.ndarray
    hues: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.hues = np.asarray(self.hues, dtype=float).reshape(-1)
        if len(self.points) < 4:
            raise MarkerError("need at least 4 markers")
        if len(self.hues) != len(self.points):
            raise MarkerError("one hue per marker required")
        if np.any((self.hues < 0) | (self.hues >= 360)):
            raise MarkerError("hues must lie in [0, 360)")
        self._check_noncoplanar()
        self._check_asymmetric()

    def __len__(self) -> int:
        return len(self.points)

    def _check_noncoplanar(self, tol: float = 1e-3):
        centered = self.points - self.points.mean(axis=0)
        sv = np.linalg.svd(centered, compute_uv=False)
        if sv[-1] < tol:
            raise MarkerError("markers are coplanar within tolerance")

    def _check_asymmetric(self, tol: float = 1e-3):
        """Reject layouts congruent with themselves under a nontrivial
        rotation-permutation (would make the pose ambiguous)."""
        pts = self.points - self.points.mean(axis=0)
        n = len(pts)
        for perm in permutations(range(n)):
            if perm == tuple(range(n)):
                continue
            q = pts[list(perm)]
            # Best-fit rotation between pts and q; congruent if residual small.
            H = pts.T @ q
            U, _, Vt = np.linalg.svd(H)
            D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
            R = Vt.T @ D @ U.T
            if np.max(np.linalg.norm(pts @ R.T - q, axis=1)) < tol:
                raise MarkerError("marker layout is rotationally symmetric")


def default_constellation() -> Constellation:
    """Five-marker layout, non-coplanar and asymmetric, ~16 cm spread.

    The pattern keeps every pair at least ~5 cm apart in the y-z plane so
    frontal projections never collapse two blobs onto each other inside
    the working view cone.
    """
    points = np.array(
        [
            [0.070, 0.075, 0.015],
            [-0.070, -0.075, 0.020],
            [0.055, 0.045, 0.080],
            [-0.060, -0.040, 0.075],
            [0.000, 0.010, 0.045],
        ]
    )
    hues = np.array([0.0, 72.0, 144.0, 216.0, 288.0])
    return Constellation(points, hues)


@dataclass
class BlobSet:
    """Detection candidates: image position, depth, hue, blob radius."""

    uv: np.ndarray
    depth: np.ndarray
    hue: np.ndarray
    radius: np.ndarray

    def __post_init__(self):
        self.uv = np.asarray(self.uv, dtype=float).reshape(-1, 2)
        n = len(self.uv)
        self.depth = np.asarray(self.depth, dtype=float).reshape(n)
        self.hue = np.asarray(self.hue, dtype=float).reshape(n)
        self.radius = np.asarray(self.radius, dtype=float).reshape(n)
        if np.any(self.depth < 0):
            raise MarkerError("blob depths must be non-negative")

    def __len__(self) -> int:
        return len(self.uv)

    @classmethod
    def empty(cls) -> "BlobSet":
        return cls(np.zeros((0, 2)), np.zeros(0), np.zeros(0), np.zeros(0))

    def subset(self, idx) -> "BlobSet":
        return BlobSet(self.uv[idx], self.depth[idx], self.hue[idx], self.radius[idx])


@dataclass
class Frame:
    """Dense sensor frame: per-pixel gray, depth, and hue grids."""

    timestamp: float
    gray: np.ndarray
    depth: np.ndarray
    hue: np.ndarray
    camera_id: str = "cam0"

    def __post_init__(self):
        if not (self.gray.shape == self.depth.shape == self.hue.shape):
            raise MarkerError("channel grids must share a shape")


@dataclass
class Roi:
    u_min: float
    u_max: float
    v_min: float
    v_max: float
    padding: float = 0.0

    def __post_init__(self):
        if self.u_max <= self.u_min or self.v_max <= self.v_min:
            raise MarkerError("degenerate region of interest")

    def contains(self, uv: np.ndarray) -> np.ndarray:
        uv = np.asarray(uv, dtype=float).reshape(-1, 2)
        return (
            (uv[:, 0] >= self.u_min - self.padding)
            & (uv[:, 0] <= self.u_max + self.padding)
            & (uv[:, 1] >= self.v_min - self.padding)
            & (uv[:, 1] <= self.v_max + self.padding)
        )


@dataclass
class Correspondence:
    """Ordered marker-candidate pairing: pixels[i] measures marker i."""

    marker_idx: np.ndarray
    candidate_idx: np.ndarray
    pixels: np.ndarray
    depths: np.ndarray
    eps: float

    def __post_init__(self):
        if len(set(self.candidate_idx.tolist())) != len(self.candidate_idx):
            raise MarkerError("correspondence must be bijective")
        if self.eps < 0:
            raise MarkerError("reprojection error must be non-negative")

    def __len__(self) -> int:
        return len(self.marker_idx)


def threshold_frame(frame: Frame, tau_depth: float, tau_gray: float) -> Frame:
    """Zero every pixel unless depth < tau_depth and gray > tau_gray."""
    if tau_depth <= 0:
        raise MarkerError("depth threshold must be positive")
    if not 0 < tau_gray < 255:
        raise MarkerError("gray threshold must be within (0, 255)")
    keep = (frame.depth < tau_depth) & (frame.gray > tau_gray)
    return Frame(
        timestamp=frame.timestamp,
        gray=np.where(keep, frame.gray, 0.0),
        depth=np.where(keep, frame.depth, 0.0),
        hue=np.where(keep, frame.hue, 0.0),
        camera_id=frame.camera_id,
    )


def extract_blobs(frame: Frame, sigma_blur: float = 1.0) -> BlobSet:
    """Gaussian blur then connected-component centroiding on a
    thresholded frame.

    Components smaller than 2 px are dropped; centroids are intensity
    weighted; depth and hue are per-component medians of the surviving
    raw pixels.
    """
    smoothed = ndimage.gaussian_filter(frame.gray, sigma=sigma_blur)
    peak = float(smoothed.max(initial=0.0))
    if peak <= 0.0:
        return BlobSet.empty()
    # Relative cut separates nearby blobs whose blurred tails overlap.
    mask = smoothed > max(2.0, 0.05 * peak)
    labels, count = ndimage.label(mask)
    if count == 0:
        return BlobSet.empty()
    uv, depth, hue, radius = [], [], [], []
    for lab in range(1, count + 1):
        rows, cols = np.nonzero(labels == lab)
        if len(rows) < 2:
            continue
        w = smoothed[rows, cols]
        total = w.sum()
        cu = float((cols * w).sum() / total)
        cv = float((rows * w).sum() / total)
        raw = frame.gray[rows, cols] > 0
        if not np.any(raw):
            continue
        uv.append([cu, cv])
        depth.append(float(np.median(frame.depth[rows[raw], cols[raw]])))
        hue.append(float(np.median(frame.hue[rows[raw], cols[raw]])))
        radius.append(float(np.sqrt(len(rows) / np.pi)))
    if not uv:
        return BlobSet.empty()
    return BlobSet(np.array(uv), np.array(depth), np.array(hue), np.array(radius))


def _mean_abs_deviation(points: np.ndarray) -> float:
    """Mean distance of points to their centroid (translation/rotation
    invariant shape statistic)."""
    centered = points - points.mean(axis=0)
    return float(np.mean(np.linalg.norm(centered, axis=1)))


def _hue_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = np.abs(a - b) % 360.0
    return np.minimum(d, 360.0 - d)


def initialize(constellation: Constellation, blobs: BlobSet, K: Intrinsics,
               lambda_mad: float = 0.05, hue_tol: float = 30.0
               ) -> tuple[bool, Correspondence | None]:
    """Brute-force correspondence search over candidate permutations.

    Declines when candidate count mismatches the marker count or when the
    back-projected candidate cloud's shape statistic deviates from the
    constellation's by more than lambda_mad. Permutations whose hues
    disagree beyond hue_tol (circular) are pruned; each survivor is posed
    with EPnP and the lowest-reprojection-error pairing wins.
    """
    p = len(constellation)
    if len(blobs) != p:
        return False, None

    cloud = back_project_many(
        np.column_stack([blobs.uv, blobs.depth]), K
    )
    delta_mad = abs(_mean_abs_deviation(constellation.points) - _mean_abs_deviation(cloud))
    if delta_mad > lambda_mad:
        return False, None

    # Canonical candidate order makes the search independent of input order.
    canon = np.lexsort((blobs.depth, blobs.uv[:, 1], blobs.uv[:, 0]))

    best_eps = np.inf
    best_perm: tuple[int, ...] | None = None
    for perm in permutations(canon):
        cand_hues = blobs.hue[list(perm)]
        if np.any(_hue_distance(constellation.hues, cand_hues) > hue_tol):
            continue
        pix = blobs.uv[list(perm)]
        try:
            sol = epnp(constellation.points, pix, K)
            eps = reprojection_error(sol.R, sol.t, constellation.points, pix, K)
        except (PnpError, DegenerateConfigError):
            continue
        if eps < best_eps:
            best_eps = eps
            best_perm = perm

    if best_perm is None:
        return False, None
    idx = np.array(best_perm)
    corr = Correspondence(
        marker_idx=np.arange(p),
        candidate_idx=idx,
        pixels=blobs.uv[idx],
        depths=blobs.depth[idx],
        eps=best_eps,
    )
    return True, corr


def predict_pixels(constellation: Constellation, x: ManifoldState,
                   cam_position: np.ndarray, cam_rotation: np.ndarray,
                   K: Intrinsics) -> np.ndarray:
    """Project body-frame markers at state x into the image."""
    pts_platform = constellation.points @ x.R.T + x.p
    pts_cam = (pts_platform - cam_position) @ cam_rotation
    uvs, _ = project_many(pts_cam, K)
    return uvs[:, 0:2]


def roi_from_projection(proj: np.ndarray, K: Intrinsics,
                        pad_scale: float = 2.0) -> Roi:
    """Padded bounding box of projected markers, clipped to the image.

    Padding is pad_scale times the cluster's RMS spread about its centroid.
    """
    spread = float(np.sqrt(np.mean(np.sum((proj - proj.mean(axis=0)) ** 2, axis=1))))
    pad = pad_scale * max(spread, 4.0)
    u_min = max(0.0, float(proj[:, 0].min()) - pad)
    u_max = min(float(K.width), float(proj[:, 0].max()) + pad)
    v_min = max(0.0, float(proj[:, 1].min()) - pad)
    v_max = min(float(K.height), float(proj[:, 1].max()) + pad)
    return Roi(u_min, u_max, v_min, v_max)


def track_correspondence(constellation: Constellation, x_prev: ManifoldState,
                         blobs: BlobSet, K: Intrinsics,
                         cam_position: np.ndarray, cam_rotation: np.ndarray,
                         pad_scale: float = 2.0) -> tuple[Correspondence, Roi]:
    """Match new candidates to markers predicted from the previous state.

    Predicted projections are shifted by the centroid difference to the
    in-ROI candidates before mutual-nearest-neighbor matching, which makes
    the pairing invariant to any common 2D translation of the blobs.
    Raises TrackingLost if the matching is not bijective over all markers.
    """
    if len(blobs) < 4:
        raise TrackingLost("fewer than 4 candidates")
    proj = predict_pixels(constellation, x_prev, cam_position, cam_rotation, K)
    roi = roi_from_projection(proj, K, pad_scale)

    inside = roi.contains(blobs.uv)
    cand_idx = np.nonzero(inside)[0]
    if len(cand_idx) < len(constellation):
        raise TrackingLost("too few candidates inside the region of interest")
    cand_uv = blobs.uv[cand_idx]

    shifted = proj + (cand_uv.mean(axis=0) - proj.mean(axis=0))

    # Mutual nearest neighbour between shifted predictions and candidates.
    d2 = np.sum((shifted[:, None, :] - cand_uv[None, :, :]) ** 2, axis=2)
    fwd = np.argmin(d2, axis=1)
    bwd = np.argmin(d2, axis=0)
    mutual = bwd[fwd] == np.arange(len(shifted))
    if not np.all(mutual) or len(set(fwd.tolist())) != len(shifted):
        raise TrackingLost("matching is not bijective")

    chosen = cand_idx[fwd]
    corr = Correspondence(
        marker_idx=np.arange(len(constellation)),
        candidate_idx=chosen,
        pixels=blobs.uv[chosen],
        depths=blobs.depth[chosen],
        eps=0.0,
    )
    return corr, roi


def render_frame(blob_specs, resolution: tuple[int, int], timestamp: float = 0.0,
                 amplitude: float = 200.0, spot_sigma: float = 1.5,
                 background_gray: float = 0.0) -> Frame:
    """Rasterize ideal blobs into a dense frame for the grid pipeline.

    blob_specs is an iterable of (u, v, depth, hue) tuples. Each blob is a
    Gaussian intensity spot; depth and hue are constant on the spot's
    support. Later blobs overwrite earlier ones where they overlap.
    """
    width, height = resolution
    gray = np.full((height, width), background_gray, dtype=float)
    depth = np.zeros((height, width), dtype=float)
    hue = np.zeros((height, width), dtype=float)
    half = int(np.ceil(4 * spot_sigma))
    for (u, v, s, h) in blob_specs:
        cu = int(round(u))
        cv = int(round(v))
        r0, r1 = max(0, cv - half), min(height, cv + half + 1)
        c0, c1 = max(0, cu - half), min(width, cu + half + 1)
        if r0 >= r1 or c0 >= c1:
            continue
        rows = np.arange(r0, r1)[:, None]
        cols = np.arange(c0, c1)[None, :]
        spot = amplitude * np.exp(
            -((cols - u) ** 2 + (rows - v) ** 2) / (2.0 * spot_sigma**2)
        )
        region = spot > 1.0
        patch_gray = gray[r0:r1, c0:c1]
        update = region & (spot > patch_gray)
        patch_gray[update] = spot[update]
        depth[r0:r1, c0:c1][update] = s
        hue[r0:r1, c0:c1][update] = h
    return Frame(timestamp=timestamp, gray=np.clip(gray, 0.0, 255.0), depth=depth, hue=hue)
