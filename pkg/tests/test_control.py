from itertools import product

import numpy as np
import pytest

from quadland.control import (
    ControlCommand,
    MissionEvent,
    MissionState,
    PidController,
    PidGains,
    TouchdownDetector,
    TRANSITIONS,
    fsm_step,
)
from quadland.manifold import ManifoldState
from quadland.planner import FlatOutput


def state_at(p, v=None):
    return ManifoldState(np.asarray(p, dtype=float), np.eye(3),
                         np.zeros(3) if v is None else np.asarray(v, dtype=float))


class TestPid:
    def test_zero_error_zero_command(self):
        pid = PidController(PidGains(feedforward=False))
        sp = FlatOutput(np.array([1.0, 2.0, 3.0]))
        cmd = pid.step(sp, state_at([1.0, 2.0, 3.0]), 0.01)
        assert np.allclose(cmd.accel, 0.0)

    def test_proportional_arithmetic(self):
        gains = PidGains(kp=[2.0, 2.0, 2.0], ki=[0, 0, 0], kd=[0, 0, 0],
                         feedforward=False)
        pid = PidController(gains)
        sp = FlatOutput(np.array([1.0, 0.0, 0.0]))
        cmd = pid.step(sp, state_at([0.0, 0.0, 0.0]), 0.01)
        # One dt of integral is clamped out by ki = 0.
        assert np.allclose(cmd.accel, [2.0, 0.0, 0.0], atol=1e-9)

    def test_feedforward_passes_through(self):
        pid = PidController(PidGains(kp=[0, 0, 0], ki=[0, 0, 0], kd=[0, 0, 0]))
        sp = FlatOutput(np.zeros(3), acceleration=np.array([0.5, 0, 0]))
        cmd = pid.step(sp, state_at([0, 0, 0]), 0.01)
        assert np.allclose(cmd.accel, [0.5, 0, 0])

    def test_output_clamp(self):
        pid = PidController(PidGains(kp=[100.0] * 3, output_clamp=5.0,
                                     feedforward=False))
        sp = FlatOutput(np.array([10.0, 0, 0]))
        cmd = pid.step(sp, state_at([0, 0, 0]), 0.01)
        assert np.linalg.norm(cmd.accel) <= 5.0 + 1e-12

    def test_integral_clamp(self):
        gains = PidGains(kp=[0.0] * 3, ki=[1.0] * 3, kd=[0.0] * 3,
                         integral_clamp=0.05, feedforward=False)
        pid = PidController(gains)
        sp = FlatOutput(np.array([10.0, 0, 0]))
        for _ in range(100):
            cmd = pid.step(sp, state_at([0, 0, 0]), 0.1)
        assert abs(cmd.accel[0] - 0.05) < 1e-12

    def test_derivative_damps(self):
        gains = PidGains(kp=[0.0] * 3, ki=[0.0] * 3, kd=[3.0] * 3,
                         feedforward=False)
        pid = PidController(gains)
        sp = FlatOutput(np.zeros(3), velocity=np.zeros(3))
        cmd = pid.step(sp, state_at([0, 0, 0], v=[1.0, 0, 0]), 0.01)
        assert np.allclose(cmd.accel, [-3.0, 0, 0])


class TestFsm:
    def test_defined_edges(self):
        assert fsm_step(MissionState.IDLE, MissionEvent.INIT_OK) == (MissionState.FOLLOW, True)
        assert fsm_step(MissionState.FOLLOW, MissionEvent.LAND_REQUEST) == (MissionState.PLAN, True)
        assert fsm_step(MissionState.PLAN, MissionEvent.TRAJ_READY) == (MissionState.LAND, True)
        assert fsm_step(MissionState.LAND, MissionEvent.TOUCHDOWN_DETECTED) == (
            MissionState.TOUCHDOWN, True)
        assert fsm_step(MissionState.TOUCHDOWN, MissionEvent.MOTOR_CUT) == (
            MissionState.SHUTDOWN, True)

    def test_tracking_lost_reacquires(self):
        assert fsm_step(MissionState.LAND, MissionEvent.TRACKING_LOST) == (
            MissionState.FOLLOW, True)
        assert fsm_step(MissionState.PLAN, MissionEvent.TRACKING_LOST) == (
            MissionState.FOLLOW, True)

    def test_undefined_pairs_keep_state(self):
        state, accepted = fsm_step(MissionState.IDLE, MissionEvent.TRAJ_READY)
        assert state == MissionState.IDLE and not accepted
        state, accepted = fsm_step(MissionState.SHUTDOWN, MissionEvent.INIT_OK)
        assert state == MissionState.SHUTDOWN and not accepted

    def test_exhaustive_fuzz_stays_in_enum(self):
        rng = np.random.default_rng(0)
        events = list(MissionEvent)
        for _ in range(200):
            state = MissionState.IDLE
            for _ in range(50):
                ev = events[rng.integers(len(events))]
                state, _ = fsm_step(state, ev)
                assert isinstance(state, MissionState)

    def test_no_deadlock_outside_shutdown(self):
        # From every non-terminal state some event sequence reaches SHUTDOWN.
        for state in MissionState:
            if state == MissionState.SHUTDOWN:
                continue
            reachable = {state}
            frontier = [state]
            while frontier:
                s = frontier.pop()
                for ev in MissionEvent:
                    nxt, _ = fsm_step(s, ev)
                    if nxt not in reachable:
                        reachable.add(nxt)
                        frontier.append(nxt)
            assert MissionState.SHUTDOWN in reachable

    def test_transition_table_is_closed(self):
        for (s, e), nxt in TRANSITIONS.items():
            assert isinstance(s, MissionState)
            assert isinstance(e, MissionEvent)
            assert isinstance(nxt, MissionState)


class TestTouchdownDetector:
    def test_requires_hold(self):
        det = TouchdownDetector(z_touch=0.08, v_touch=0.3, hold_s=0.2)
        low = state_at([0, 0, 0.05])
        assert not det.update(0.0, low)
        assert not det.update(0.1, low)
        assert det.update(0.21, low)

    def test_resets_on_bounce(self):
        det = TouchdownDetector(hold_s=0.2)
        low = state_at([0, 0, 0.05])
        high = state_at([0, 0, 0.5])
        assert not det.update(0.0, low)
        assert not det.update(0.1, high)
        assert not det.update(0.2, low)
        assert not det.update(0.35, low)
        assert det.update(0.45, low)

    def test_fast_descent_not_touchdown(self):
        det = TouchdownDetector(v_touch=0.3, hold_s=0.0)
        fast = state_at([0, 0, 0.05], v=[0, 0, -1.0])
        assert not det.update(0.0, fast)
