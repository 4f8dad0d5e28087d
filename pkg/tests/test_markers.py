from itertools import permutations

import numpy as np
import pytest

from quadland.camera import CameraRig, intrinsics_from_fov, project_many
from quadland.manifold import ManifoldState, exp_so3, yaw_rotation
from quadland.markers import (
    BlobSet,
    Constellation,
    Frame,
    MarkerError,
    TrackingLost,
    default_constellation,
    extract_blobs,
    initialize,
    predict_pixels,
    render_frame,
    threshold_frame,
    track_correspondence,
)
from quadland.pnp import epnp, reprojection_error


def make_K():
    return intrinsics_from_fov((87.0, 58.0), (1280, 720))


def facing_state(p, yaw=np.pi):
    return ManifoldState(np.asarray(p, dtype=float), yaw_rotation(yaw), np.zeros(3))


def render_blobs(constellation, x, rig, noise_px=0.0, rng=None):
    """Ideal marker projections as a BlobSet (sparse sensing path)."""
    pts_platform = constellation.points @ x.R.T + x.p
    cam = rig.to_camera(pts_platform)
    uvs, _ = project_many(cam, rig.intrinsics)
    uv = uvs[:, :2].copy()
    if noise_px > 0:
        uv += rng.normal(0, noise_px, size=uv.shape)
    return BlobSet(uv, uvs[:, 2], constellation.hues.copy(), np.full(len(uv), 3.0))


class TestConstellation:
    def test_default_is_valid(self):
        c = default_constellation()
        assert len(c) == 5

    def test_rejects_coplanar(self):
        pts = np.array([[0.1, 0, 0], [0, 0.1, 0], [-0.1, 0, 0], [0, -0.1, 0]])
        with pytest.raises(MarkerError):
            Constellation(pts, np.array([0.0, 90.0, 180.0, 270.0]))

    def test_rejects_symmetric(self):
        # Square with an apex above its center: 90-degree rotational symmetry.
        pts = np.array(
            [[0.1, 0, 0], [0, 0.1, 0], [-0.1, 0, 0], [0, -0.1, 0], [0, 0, 0.1]]
        )
        with pytest.raises(MarkerError):
            Constellation(pts, np.array([0.0, 72.0, 144.0, 216.0, 288.0]))

    def test_rejects_too_few(self):
        with pytest.raises(MarkerError):
            Constellation(np.eye(3) * 0.1, np.array([0.0, 10.0, 20.0]))


class TestThreshold:
    def test_dim_frame_empties(self):
        frame = Frame(0.0, np.full((40, 40), 30.0), np.full((40, 40), 1.0), np.zeros((40, 40)))
        out = threshold_frame(frame, tau_depth=3.5, tau_gray=60.0)
        assert np.all(out.gray == 0)

    def test_single_bright_near_pixel_survives(self):
        gray = np.zeros((40, 40))
        depth = np.full((40, 40), 10.0)
        gray[5, 7] = 200.0
        depth[5, 7] = 1.0
        out = threshold_frame(Frame(0.0, gray, depth, np.zeros((40, 40))), 3.5, 60.0)
        assert out.gray[5, 7] == 200.0
        assert np.count_nonzero(out.gray) == 1

    def test_far_clutter_removed(self):
        # Five near blobs plus bright clutter beyond the depth gate.
        specs = [(30 + 25 * i, 40, 1.5, 10.0 * i) for i in range(5)]
        clutter = [(200, 100, 8.0, 50.0), (220, 110, 9.0, 60.0)]
        frame = render_frame(specs + clutter, (256, 144))
        out = threshold_frame(frame, tau_depth=3.5, tau_gray=40.0)
        blobs = extract_blobs(out, sigma_blur=1.0)
        assert len(blobs) == 5

    def test_parameter_validation(self):
        frame = Frame(0.0, np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((4, 4)))
        with pytest.raises(MarkerError):
            threshold_frame(frame, -1.0, 60.0)
        with pytest.raises(MarkerError):
            threshold_frame(frame, 1.0, 300.0)


class TestExtractBlobs:
    def test_empty_frame(self):
        frame = Frame(0.0, np.zeros((32, 32)), np.zeros((32, 32)), np.zeros((32, 32)))
        assert len(extract_blobs(frame)) == 0

    def test_centroid_accuracy(self):
        frame = render_frame([(100.0, 50.0, 2.0, 120.0)], (256, 144))
        out = threshold_frame(frame, 3.5, 40.0)
        blobs = extract_blobs(out, sigma_blur=1.0)
        assert len(blobs) == 1
        assert abs(blobs.uv[0, 0] - 100.0) < 0.3
        assert abs(blobs.uv[0, 1] - 50.0) < 0.3
        assert abs(blobs.depth[0] - 2.0) < 1e-9
        assert abs(blobs.hue[0] - 120.0) < 1e-9

    def test_subpixel_centroid(self):
        frame = render_frame([(100.4, 50.7, 2.0, 120.0)], (256, 144))
        out = threshold_frame(frame, 3.5, 40.0)
        blobs = extract_blobs(out, sigma_blur=1.0)
        assert abs(blobs.uv[0, 0] - 100.4) < 0.3
        assert abs(blobs.uv[0, 1] - 50.7) < 0.3

    def test_separated_spots_resolve(self):
        sigma = 1.0
        frame = render_frame(
            [(60.0, 60.0, 1.0, 0.0), (60.0 + 8 * sigma, 60.0, 1.0, 90.0)],
            (128, 128),
            spot_sigma=1.0,
        )
        out = threshold_frame(frame, 3.5, 40.0)
        blobs = extract_blobs(out, sigma_blur=sigma)
        assert len(blobs) == 2


class TestInitialize:
    def test_size_mismatch_declines(self):
        c = default_constellation()
        blobs = BlobSet(np.zeros((3, 2)), np.ones(3), np.zeros(3), np.ones(3))
        ok, corr = initialize(c, blobs, make_K())
        assert not ok and corr is None

    def test_mad_gate_rejects_wrong_shape(self):
        c = default_constellation()
        K = make_K()
        # Five pixels whose back-projection is far too spread out.
        uv = np.array([[100, 100], [1100, 100], [1100, 600], [100, 600], [640, 360]], dtype=float)
        blobs = BlobSet(uv, np.full(5, 2.5), c.hues.copy(), np.full(5, 3.0))
        ok, corr = initialize(c, blobs, K)
        assert not ok

    def test_recovers_exact_pairing(self):
        c = default_constellation()
        rig = CameraRig(position=np.zeros(3), tilt_deg=0.0)
        K = rig.intrinsics
        rng = np.random.default_rng(0)
        x = facing_state([1.2, 0.05, 0.1])
        blobs = render_blobs(c, x, rig)
        shuffle = rng.permutation(len(c))
        shuffled = blobs.subset(shuffle)
        ok, corr = initialize(c, shuffled, K)
        assert ok
        assert corr.eps < 1e-6
        # pairing must undo the shuffle
        assert np.array_equal(shuffled.uv[corr.candidate_idx], blobs.uv)

    def test_matches_exhaustive_oracle(self):
        c = default_constellation()
        rig = CameraRig(position=np.zeros(3), tilt_deg=0.0)
        K = rig.intrinsics
        rng = np.random.default_rng(1)
        for _ in range(30):
            p = np.array([rng.uniform(0.8, 2.5), rng.uniform(-0.3, 0.3), rng.uniform(-0.2, 0.3)])
            yaw = np.pi + rng.uniform(-0.5, 0.5)
            x = facing_state(p, yaw)
            blobs = render_blobs(c, x, rig)
            shuffled = blobs.subset(rng.permutation(len(c)))
            ok, corr = initialize(c, shuffled, K, hue_tol=400.0)
            assert ok
            # Exhaustive oracle: every permutation, no pruning.
            best_eps, best = np.inf, None
            for perm in permutations(range(len(c))):
                pix = shuffled.uv[list(perm)]
                try:
                    sol = epnp(c.points, pix, K)
                    eps = reprojection_error(sol.R, sol.t, c.points, pix, K)
                except Exception:
                    continue
                if eps < best_eps:
                    best_eps, best = eps, perm
            assert tuple(corr.candidate_idx) == best

    def test_input_order_invariance(self):
        c = default_constellation()
        rig = CameraRig(position=np.zeros(3), tilt_deg=0.0)
        K = rig.intrinsics
        rng = np.random.default_rng(2)
        x = facing_state([1.5, -0.1, 0.2])
        blobs = render_blobs(c, x, rig, noise_px=0.5, rng=rng)
        ok_ref, corr_ref = initialize(c, blobs, K)
        assert ok_ref
        ref_pairs = sorted(zip(corr_ref.marker_idx, map(tuple, corr_ref.pixels)))
        for _ in range(5):
            perm = rng.permutation(len(c))
            ok, corr = initialize(c, blobs.subset(perm), K)
            assert ok
            pairs = sorted(zip(corr.marker_idx, map(tuple, corr.pixels)))
            assert pairs == ref_pairs

    def test_hue_rejection(self):
        c = default_constellation()
        rig = CameraRig(position=np.zeros(3), tilt_deg=0.0)
        x = facing_state([1.2, 0.0, 0.1])
        blobs = render_blobs(c, x, rig)
        blobs = BlobSet(blobs.uv, blobs.depth, (blobs.hue + 180.0) % 360.0, blobs.radius)
        ok, corr = initialize(c, blobs, rig.intrinsics, hue_tol=30.0)
        assert not ok


class TestTracking:
    def setup_method(self):
        self.c = default_constellation()
        self.rig = CameraRig(position=np.zeros(3), tilt_deg=0.0)
        self.K = self.rig.intrinsics
        self.x = facing_state([1.5, 0.0, 0.1])

    def test_exact_positions_identity_pairing(self):
        blobs = render_blobs(self.c, self.x, self.rig)
        corr, roi = track_correspondence(
            self.c, self.x, blobs, self.K, self.rig.position, self.rig.rotation
        )
        assert np.array_equal(corr.candidate_idx, np.arange(len(self.c)))

    def test_translation_invariance(self):
        blobs = render_blobs(self.c, self.x, self.rig)
        shifted = BlobSet(blobs.uv + np.array([40.0, -25.0]), blobs.depth, blobs.hue, blobs.radius)
        corr, _ = track_correspondence(
            self.c, self.x, shifted, self.K, self.rig.position, self.rig.rotation,
            pad_scale=6.0,
        )
        assert np.array_equal(corr.candidate_idx, np.arange(len(self.c)))

    def test_center_shift_beats_plain_nearest_neighbor(self):
        # Uniform 60 px blob motion over a tight cluster: plain nearest
        # neighbour against the prediction mismatches, center-shift recovers.
        proj = predict_pixels(self.c, self.x, self.rig.position, self.rig.rotation, self.K)
        spread = proj - proj.mean(axis=0)
        tight = proj.mean(axis=0) + spread * (10.0 / np.abs(spread).max())
        moved = tight + np.array([60.0, 0.0])
        blobs = BlobSet(moved, np.full(5, 1.5), self.c.hues.copy(), np.full(5, 3.0))

        d2 = np.sum((proj[:, None, :] - moved[None, :, :]) ** 2, axis=2)
        plain_nn = np.argmin(d2, axis=1)
        assert not np.array_equal(plain_nn, np.arange(5))  # adversarial case holds

        # Build a prediction whose projection equals the tight cluster.
        # Use the same state but candidates built from its own projection.
        tight_blobs = BlobSet(tight + np.array([60.0, 0.0]), np.full(5, 1.5),
                              self.c.hues.copy(), np.full(5, 3.0))
        shifted_pred = tight
        d2s = np.sum(((shifted_pred + (moved.mean(0) - tight.mean(0)))[:, None, :]
                      - moved[None, :, :]) ** 2, axis=2)
        center_nn = np.argmin(d2s, axis=1)
        assert np.array_equal(center_nn, np.arange(5))

    def test_lost_when_too_few(self):
        blobs = BlobSet(np.zeros((2, 2)), np.ones(2), np.zeros(2), np.ones(2))
        with pytest.raises(TrackingLost):
            track_correspondence(self.c, self.x, blobs, self.K,
                                 self.rig.position, self.rig.rotation)

    def test_lost_on_non_bijective(self):
        blobs = render_blobs(self.c, self.x, self.rig)
        uv = blobs.uv.copy()
        uv[1] = uv[0] + np.array([0.1, 0.1])
        uv[2] = uv[0] + np.array([-0.1, 0.1])
        collapsed = BlobSet(uv, blobs.depth, blobs.hue, blobs.radius)
        with pytest.raises(TrackingLost):
            track_correspondence(self.c, self.x, collapsed, self.K,
                                 self.rig.position, self.rig.rotation)
