import numpy as np
import pytest

from quadland.manifold import (
    ManifoldError,
    ManifoldState,
    boxminus,
    boxplus,
    exp_so3,
    log_so3,
    numerical_jacobian,
    skew,
    so3_right_jacobian_inv,
)


def series_expm(W: np.ndarray, terms: int = 30) -> np.ndarray:
    """Matrix-exponential power series, the independent oracle.

    30 terms keep the truncation error below 1e-12 for angles up to pi.
    """
    out = np.eye(3)
    term = np.eye(3)
    for k in range(1, terms + 1):
        term = term @ W / k
        out = out + term
    return out


def random_rotvec(rng, max_angle=np.pi - 1e-3):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return axis * rng.uniform(0, max_angle)


class TestExpLog:
    def test_zero_gives_identity(self):
        assert np.allclose(exp_so3(np.zeros(3)), np.eye(3))

    def test_half_turn_about_x(self):
        R = exp_so3(np.array([np.pi, 0, 0]))
        assert np.allclose(R, np.diag([1.0, -1.0, -1.0]), atol=1e-12)

    def test_matches_series_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            w = random_rotvec(rng)
            assert np.max(np.abs(exp_so3(w) - series_expm(skew(w)))) < 1e-10

    def test_log_identity(self):
        assert np.allclose(log_so3(np.eye(3)), np.zeros(3))

    def test_log_half_turn(self):
        w = log_so3(np.diag([1.0, -1.0, -1.0]))
        assert abs(np.linalg.norm(w) - np.pi) < 1e-9
        assert abs(abs(w[0]) - np.pi) < 1e-9

    def test_round_trip_random(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            w = random_rotvec(rng)
            R = exp_so3(w)
            assert np.max(np.abs(exp_so3(log_so3(R)) - R)) < 1e-9

    def test_round_trip_near_pi(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            w = axis * rng.uniform(np.pi - 1e-5, np.pi)
            R = exp_so3(w)
            assert np.max(np.abs(exp_so3(log_so3(R)) - R)) < 1e-8

    def test_log_angle_range(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            R = exp_so3(random_rotvec(rng))
            assert np.linalg.norm(log_so3(R)) <= np.pi + 1e-12

    def test_rejects_non_rotation(self):
        with pytest.raises(ManifoldError):
            log_so3(np.eye(3) * 2.0)
        with pytest.raises(ManifoldError):
            exp_so3(np.array([np.nan, 0, 0]))


def random_state(rng) -> ManifoldState:
    return ManifoldState(rng.normal(size=3), exp_so3(random_rotvec(rng)), rng.normal(size=3))


class TestBoxOps:
    def test_boxplus_zero(self):
        rng = np.random.default_rng(5)
        x = random_state(rng)
        y = boxplus(x, np.zeros(9))
        assert np.allclose(y.p, x.p) and np.allclose(y.R, x.R) and np.allclose(y.v, x.v)

    def test_inverse_relation(self):
        rng = np.random.default_rng(6)
        for _ in range(300):
            x = random_state(rng)
            delta = rng.normal(size=9)
            delta[3:6] = random_rotvec(rng, max_angle=np.pi - 1e-2)
            back = boxminus(boxplus(x, delta), x)
            assert np.linalg.norm(back - delta) < 1e-9

    def test_boxminus_self_is_zero(self):
        rng = np.random.default_rng(7)
        x = random_state(rng)
        assert np.linalg.norm(boxminus(x, x)) < 1e-12

    def test_rotation_only_difference(self):
        a = ManifoldState(np.zeros(3), exp_so3(np.array([0, 0, np.pi / 2])), np.zeros(3))
        b = ManifoldState.identity()
        delta = boxminus(a, b)
        assert np.allclose(delta[3:6], [0, 0, np.pi / 2], atol=1e-12)
        assert np.allclose(delta[[0, 1, 2, 6, 7, 8]], 0.0)

    def test_round_trip_pairs(self):
        rng = np.random.default_rng(8)
        for _ in range(300):
            a, b = random_state(rng), random_state(rng)
            recon = boxplus(b, boxminus(a, b))
            assert np.linalg.norm(recon.p - a.p) < 1e-9
            assert np.max(np.abs(recon.R - a.R)) < 1e-9
            assert np.linalg.norm(recon.v - a.v) < 1e-9

    def test_composition_chain(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            x = random_state(rng)
            d1, d2 = rng.normal(size=9) * 0.3, rng.normal(size=9) * 0.3
            chained = boxplus(boxplus(x, d1), d2)
            # Vector blocks must add exactly; rotations must compose.
            assert np.linalg.norm(chained.p - (x.p + d1[0:3] + d2[0:3])) < 1e-9
            expected_R = x.R @ exp_so3(d1[3:6]) @ exp_so3(d2[3:6])
            assert np.max(np.abs(chained.R - expected_R)) < 1e-9

    def test_orthonormality_preserved(self):
        rng = np.random.default_rng(10)
        x = random_state(rng)
        for _ in range(50):
            x = boxplus(x, rng.normal(size=9) * 0.5)
        assert np.max(np.abs(x.R.T @ x.R - np.eye(3))) < 1e-9
        assert abs(np.linalg.det(x.R) - 1.0) < 1e-9


GRAVITY = np.array([0.0, 0.0, -9.81])


def mean_dynamics(dt: float):
    """Discrete constant-velocity / hover-thrust mean prediction."""

    def f(x: ManifoldState) -> ManifoldState:
        return ManifoldState(
            x.p + dt * x.v,
            x.R,
            x.v + dt * (x.R @ (-GRAVITY) + GRAVITY),
        )

    return f


class TestNumericalJacobian:
    def test_identity_map(self):
        rng = np.random.default_rng(11)
        x = random_state(rng)
        J = numerical_jacobian(lambda s: s, x)
        assert np.max(np.abs(J - np.eye(9))) < 1e-6

    def test_translation_extraction(self):
        rng = np.random.default_rng(12)
        x = random_state(rng)
        J = numerical_jacobian(lambda s: s.p, x)
        expected = np.hstack([np.eye(3), np.zeros((3, 6))])
        assert np.max(np.abs(J - expected)) < 1e-6

    def test_prediction_model_at_hover(self):
        dt = 0.02
        x = ManifoldState.identity()
        J = numerical_jacobian(mean_dynamics(dt), x)
        # Analytic blocks: dp'/dv = dt I, dv'/dtheta = dt R [g]x at R = I.
        expected = np.eye(9)
        expected[0:3, 6:9] = dt * np.eye(3)
        expected[6:9, 3:6] = dt * skew(GRAVITY)
        assert np.max(np.abs(J - expected)) < 1e-5

    def test_prediction_model_tilted(self):
        dt = 0.02
        rng = np.random.default_rng(13)
        x = random_state(rng)
        J = numerical_jacobian(mean_dynamics(dt), x)
        expected = np.eye(9)
        expected[0:3, 6:9] = dt * np.eye(3)
        expected[6:9, 3:6] = dt * x.R @ skew(GRAVITY)
        assert np.max(np.abs(J - expected)) < 1e-5

    def test_step_bounds(self):
        x = ManifoldState.identity()
        with pytest.raises(ValueError):
            numerical_jacobian(lambda s: s.p, x, eps=1e-2)


class TestRightJacobianInverse:
    def test_matches_finite_difference(self):
        rng = np.random.default_rng(14)
        for _ in range(50):
            w = random_rotvec(rng, max_angle=2.5)
            Jinv = so3_right_jacobian_inv(w)
            eps = 1e-6
            num = np.zeros((3, 3))
            for i in range(3):
                d = np.zeros(3)
                d[i] = eps
                hi = log_so3(exp_so3(w) @ exp_so3(d))
                lo = log_so3(exp_so3(w) @ exp_so3(-d))
                num[:, i] = (hi - lo) / (2 * eps)
            assert np.max(np.abs(Jinv - num)) < 1e-5
