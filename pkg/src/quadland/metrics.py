"""Evaluation metrics: absolute trajectory error, tracking success rate,
and setpoint-tracking RMSE."""

from __future__ import annotations

import numpy as np

from .manifold import ManifoldState, boxminus


class MetricsError(ValueError):
    pass


def align_nearest(times_a: np.ndarray, times_b: np.ndarray,
                  tol: float = 0.005) -> list:
    """Index pairs (i, j) matching each a-timestamp to the nearest
    b-timestamp within tol seconds."""
    times_b = np.asarray(times_b, dtype=float)
    order = np.argsort(times_b)
    sorted_b = times_b[order]
    pairs = []
    for i, t in enumerate(np.asarray(times_a, dtype=float)):
        j = int(np.searchsorted(sorted_b, t))
        best = None
        for cand in (j - 1, j):
            if 0 <= cand < len(sorted_b):
                d = abs(sorted_b[cand] - t)
                if best is None or d < best[1]:
                    best = (cand, d)
        if best is not None and best[1] <= tol:
            pairs.append((i, int(order[best[0]])))
    return pairs


def compute_ate(est_times, est_states, truth_times, truth_states,
                tol: float = 0.005) -> tuple[float, float]:
    """Translation (m) and rotation (deg) RMSE of manifold residuals
    between aligned estimate/truth pairs."""
    pairs = align_nearest(est_times, truth_times, tol)
    if not pairs:
        raise MetricsError("estimate and truth timelines do not overlap")
    sq_t, sq_r = [], []
    for i, j in pairs:
        delta = boxminus(est_states[i], truth_states[j])
        sq_t.append(float(delta[0:3] @ delta[0:3]))
        sq_r.append(float(delta[3:6] @ delta[3:6]))
    ate_t = float(np.sqrt(np.mean(sq_t)))
    ate_r = float(np.degrees(np.sqrt(np.mean(sq_r))))
    return ate_t, ate_r


def success_rate(statuses: list) -> float:
    """Fraction of frames with a valid, sub-threshold correspondence."""
    if not statuses:
        return 0.0
    good = sum(1 for s in statuses if s in ("init", "tracked"))
    return good / len(statuses)


def tracking_rmse(setpoints: np.ndarray, truths: np.ndarray) -> float:
    """Position RMSE between commanded setpoints and the true state."""
    setpoints = np.asarray(setpoints, dtype=float).reshape(-1, 3)
    truths = np.asarray(truths, dtype=float).reshape(-1, 3)
    if len(setpoints) == 0 or len(setpoints) != len(truths):
        raise MetricsError("setpoint/truth length mismatch")
    err = setpoints - truths
    return float(np.sqrt(np.mean(np.sum(err * err, axis=1))))
