"""Minimum-jerk piecewise Bezier trajectory generation in the platform frame.

Flat outputs are the Cartesian translation plus yaw. Segments use the
Bernstein basis so the convex-hull property (position control points
inside their corridor cell) and the hodograph property (derivative control
points inside box limits) turn state constraints into affine constraints
on the control points. The jerk integral is quadratic in the control
points, giving a QP per candidate time allocation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np

from .corridor import Vsfc
from .qpsolver import QpProblem, QpSolution, solve


class PlannerError(ValueError):
    pass


class InfeasibleLimitsError(PlannerError):
    """Platform motion exhausts the vehicle's dynamic budget."""


class NoFeasibleTimeError(PlannerError):
    """Every candidate time allocation was infeasible."""


@dataclass
class FlatOutput:
    """Position, velocity, acceleration (platform frame) and yaw."""

    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    acceleration: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw: float = 0.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(3)
        self.acceleration = np.asarray(self.acceleration, dtype=float).reshape(3)


@dataclass
class DynamicLimits:
    """Symmetric per-axis speed and acceleration bounds."""

    vel: np.ndarray
    acc: np.ndarray
    frame: str = "inertial"  # 'inertial' or 'platform'

    def __post_init__(self):
        self.vel = np.asarray(self.vel, dtype=float).reshape(3)
        self.acc = np.asarray(self.acc, dtype=float).reshape(3)
        if np.any(self.vel <= 0) or np.any(self.acc <= 0):
            raise PlannerError("dynamic limits must be positive")


def _rotated_box(R: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """Half-widths of the axis-aligned symmetric box inscribed in the
    rotation of the box with the given half-widths.

    Exact for axis-permuting rotations (including the identity); for
    general rotations the result satisfies |R^T| h <= radii, so any
    point inside the returned box maps back inside the original budget.
    """
    radii = np.asarray(radii, dtype=float)
    B = np.abs(np.asarray(R, dtype=float))
    candidates = []
    # Equality solve: exact for axis permutations but can skew badly for
    # intermediate angles.
    try:
        h = np.linalg.solve(B.T, radii)
        if np.all(np.isfinite(h)) and np.all(h > 0):
            candidates.append(h)
    except np.linalg.LinAlgError:
        pass
    # Shape-preserving scaling plus a greedy per-axis enlargement sweep.
    scale = float(np.min(radii / (B.T @ radii)))
    h = scale * radii
    for i in range(3):
        slack = np.inf
        for k in range(3):
            if B[i, k] > 1e-12:
                room = radii[k] - (B[:, k] @ h - B[i, k] * h[i])
                slack = min(slack, room / B[i, k])
        if np.isfinite(slack) and slack > h[i]:
            h[i] = slack
    candidates.append(h)
    # Prefer the candidate with the best worst axis; both are feasible.
    best = max(candidates, key=lambda c: float(np.min(c)))
    over = np.max(B.T @ best / radii)
    if over > 1.0:
        best = best / over
    return best


def rotate_limits(limits: DynamicLimits, R_inertial_to_platform: np.ndarray,
                  platform_rates: np.ndarray) -> DynamicLimits:
    """Relative-frame dynamic budget: subtract the platform's rates and
    rotate both blocks into the platform frame.

    platform_rates stacks the platform velocity and acceleration (6,) in
    the inertial frame; callers wanting a conservative budget pass
    per-axis magnitudes. The rotated budget is the symmetric box
    inscribed in the rotation of the residual box, so commanded
    platform-frame rates can never exhaust the inertial budget. Raises
    if any axis budget closes.
    """
    if limits.frame != "inertial":
        raise PlannerError("input limits must be inertial-frame")
    platform_rates = np.asarray(platform_rates, dtype=float).reshape(6)
    R = np.asarray(R_inertial_to_platform, dtype=float)
    residual_vel = limits.vel - platform_rates[0:3]
    residual_acc = limits.acc - platform_rates[3:6]
    if np.any(residual_vel <= 0) or np.any(residual_acc <= 0):
        raise InfeasibleLimitsError("platform rates exceed the vehicle budget")
    vel = _rotated_box(R, residual_vel)
    acc = _rotated_box(R, residual_acc)
    return DynamicLimits(vel=vel, acc=acc, frame="platform")


def bernstein_matrix(n: int, duration: float) -> np.ndarray:
    """Map control points to real-time monomial coefficients.

    Row m of M gives the coefficient of t^m of the degree-n Bezier curve
    with unit control points over [0, duration].
    """
    if n > 12:
        raise PlannerError("degree capped at 12 to avoid binomial blow-up")
    if duration <= 0:
        raise PlannerError("duration must be positive")
    M = np.zeros((n + 1, n + 1))
    for i in range(n + 1):
        for m in range(i, n + 1):
            M[m, i] = comb(n, i) * comb(n - i, m - i) * (-1.0) ** (m - i)
    scale = duration ** -np.arange(n + 1, dtype=float)
    return M * scale[:, None]


def jerk_cost_matrix(n: int, duration: float) -> np.ndarray:
    """Gram matrix of third-derivative monomials over [0, duration]."""
    if n < 3:
        raise PlannerError("jerk cost needs degree >= 3")
    Q = np.zeros((n + 1, n + 1))
    for m in range(3, n + 1):
        for l in range(3, n + 1):
            fm = m * (m - 1) * (m - 2)
            fl = l * (l - 1) * (l - 2)
            Q[m, l] = fm * fl * duration ** (m + l - 5) / (m + l - 5)
    return Q


def bernstein_basis(n: int, tau: np.ndarray) -> np.ndarray:
    """Bernstein values b_i^n(tau) for tau in [0, 1]; shape (len(tau), n+1)."""
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    out = np.empty((len(tau), n + 1))
    for i in range(n + 1):
        out[:, i] = comb(n, i) * tau**i * (1 - tau) ** (n - i)
    return out


def hodograph_points(ctrl: np.ndarray, order: int, duration: float) -> np.ndarray:
    """Control points of the order-th derivative curve.

    Each differentiation maps degree-k control points c to
    (k / duration) * diff(c).
    """
    ctrl = np.asarray(ctrl, dtype=float)
    n = ctrl.shape[-1] - 1
    if order > n:
        return np.zeros(ctrl.shape[:-1] + (1,))
    out = ctrl
    k = n
    for _ in range(order):
        out = (k / duration) * np.diff(out, axis=-1)
        k -= 1
    return out


@dataclass
class BezierSegment:
    """One polynomial piece: per-axis control points over [0, duration]."""

    ctrl: np.ndarray  # (3, n+1)
    duration: float

    def __post_init__(self):
        self.ctrl = np.asarray(self.ctrl, dtype=float)
        if self.ctrl.ndim != 2 or self.ctrl.shape[0] != 3:
            raise PlannerError("control points must be (3, n+1)")
        if self.duration <= 0:
            raise PlannerError("segment duration must be positive")

    @property
    def degree(self) -> int:
        return self.ctrl.shape[1] - 1

    def eval(self, t: float, order: int = 0) -> np.ndarray:
        pts = hodograph_points(self.ctrl, order, self.duration) if order else self.ctrl
        n = pts.shape[1] - 1
        tau = np.clip(t / self.duration, 0.0, 1.0)
        basis = bernstein_basis(n, np.array([tau]))[0]
        return pts @ basis


@dataclass
class PiecewiseBezier:
    """Ordered landing segments starting at t_start, with a fixed yaw."""

    segments: list
    t_start: float = 0.0
    yaw: float = 0.0
    cost: float = 0.0

    @property
    def total_duration(self) -> float:
        return float(sum(s.duration for s in self.segments))

    @property
    def t_end(self) -> float:
        return self.t_start + self.total_duration

    def eval(self, t: float) -> FlatOutput:
        """Clamped evaluation: before the start holds the initial state,
        past the end holds the terminal state."""
        rel = min(max(t - self.t_start, 0.0), self.total_duration)
        seg_t = rel
        seg = self.segments[-1]
        for s in self.segments:
            if seg_t <= s.duration or s is self.segments[-1]:
                seg = s
                break
            seg_t -= s.duration
        seg_t = min(seg_t, seg.duration)
        return FlatOutput(
            position=seg.eval(seg_t, 0),
            velocity=seg.eval(seg_t, 1),
            acceleration=seg.eval(seg_t, 2),
            yaw=self.yaw,
        )

    def junction_mismatch(self) -> float:
        """Worst C0/C1/C2 discontinuity across junctions."""
        worst = 0.0
        for a, b in zip(self.segments[:-1], self.segments[1:]):
            for order in range(3):
                va = a.eval(a.duration, order)
                vb = b.eval(0.0, order)
                worst = max(worst, float(np.max(np.abs(va - vb))))
        return worst


@dataclass
class TimeAllocationSet:
    """Candidate per-segment duration vectors within [t_min, t_max] totals."""

    candidates: list
    t_min: float
    t_max: float

    def __post_init__(self):
        for durations in self.candidates:
            total = float(np.sum(durations))
            if not (self.t_min - 1e-9 <= total <= self.t_max + 1e-9):
                raise PlannerError("candidate total outside allocation bounds")


def make_time_allocation(distance: float, limits: DynamicLimits,
                         fractions: np.ndarray, count: int = 8,
                         span: float = 4.0) -> TimeAllocationSet:
    """Log-spaced totals from the velocity-limited minimum time up to
    span times it, split between segments by the given fractions."""
    v_floor = float(np.min(limits.vel))
    t_min = max(distance / v_floor, 0.5)
    t_max = span * t_min
    fractions = np.asarray(fractions, dtype=float)
    fractions = fractions / fractions.sum()
    totals = np.geomspace(t_min, t_max, count)
    candidates = [total * fractions for total in totals]
    return TimeAllocationSet(candidates=candidates, t_min=t_min, t_max=t_max)


def _derivative_row(n: int, duration: float, order: int, at_end: bool) -> np.ndarray:
    """Row mapping one segment's control points to an endpoint derivative.

    Bezier curves interpolate their first and last control points, so the
    endpoint derivative is the first or last hodograph control point.
    """
    mat = _hodograph_matrix(n, duration, order)
    return mat[-1] if at_end else mat[0]


def assemble_qp(vsfc: Vsfc | None, limits: DynamicLimits | None,
                start: FlatOutput, end: FlatOutput,
                durations: np.ndarray, degree: int = 7
                ) -> tuple[QpProblem, dict]:
    """Stack the per-axis jerk cost with boundary, continuity, corridor,
    and dynamic-limit constraints into one QP.

    Decision vector: control points ordered axis-major, then segment,
    then index. Corridor rows couple the three axes of one control point;
    velocity/acceleration rows bound hodograph points per axis.
    """
    durations = np.asarray(durations, dtype=float).reshape(-1)
    S = len(durations)
    n = degree
    per_axis = S * (n + 1)
    nvar = 3 * per_axis
    cells = None
    if vsfc is not None:
        if S != 2:
            raise PlannerError("corridor-constrained plans use two segments")
        cells = vsfc.cells()
        for state, cell, name in ((start, cells[0], "start"), (end, cells[1], "end")):
            if not cell.contains(state.position.reshape(1, 3), slack=1e-9)[0]:
                raise PlannerError(f"{name} state violates its corridor cell")
    if limits is not None and limits.frame != "platform":
        raise PlannerError("planner limits must be platform-frame")

    def idx(axis: int, seg: int, i: int) -> int:
        return axis * per_axis + seg * (n + 1) + i

    P = np.zeros((nvar, nvar))
    for seg, T in enumerate(durations):
        M = bernstein_matrix(n, T)
        Q = jerk_cost_matrix(n, T)
        block = 2.0 * (M.T @ Q @ M)
        block = 0.5 * (block + block.T)
        for axis in range(3):
            a = idx(axis, seg, 0)
            P[a:a + n + 1, a:a + n + 1] = block

    rows, lo, hi = [], [], []

    def add_eq(row, value):
        rows.append(row)
        lo.append(value)
        hi.append(value)

    # Boundary conditions: position, velocity, acceleration at both ends.
    for axis in range(3):
        for order, bc in enumerate((start.position, start.velocity, start.acceleration)):
            row = np.zeros(nvar)
            coeff = _derivative_row(n, durations[0], order, at_end=False)
            row[idx(axis, 0, 0):idx(axis, 0, 0) + n + 1] = coeff
            add_eq(row, bc[axis])
        for order, bc in enumerate((end.position, end.velocity, end.acceleration)):
            row = np.zeros(nvar)
            coeff = _derivative_row(n, durations[-1], order, at_end=True)
            row[idx(axis, S - 1, 0):idx(axis, S - 1, 0) + n + 1] = coeff
            add_eq(row, bc[axis])
        # Junction continuity through second order.
        for seg in range(S - 1):
            for order in range(3):
                row = np.zeros(nvar)
                left = _derivative_row(n, durations[seg], order, at_end=True)
                right = _derivative_row(n, durations[seg + 1], order, at_end=False)
                row[idx(axis, seg, 0):idx(axis, seg, 0) + n + 1] = left
                row[idx(axis, seg + 1, 0):idx(axis, seg + 1, 0) + n + 1] -= right
                add_eq(row, 0.0)

    n_corridor = 0
    if cells is not None:
        for seg, cell in enumerate(cells):
            A_cell, b_cell = cell.matrix_form()
            for i in range(n + 1):
                for h in range(len(b_cell)):
                    row = np.zeros(nvar)
                    for axis in range(3):
                        row[idx(axis, seg, i)] = A_cell[h, axis]
                    rows.append(row)
                    lo.append(-np.inf)
                    hi.append(b_cell[h])
                    n_corridor += 1

    n_dyn = 0
    if limits is not None:
        for axis in range(3):
            for seg, T in enumerate(durations):
                vel_map = _hodograph_matrix(n, T, 1)
                acc_map = _hodograph_matrix(n, T, 2)
                for r in vel_map:
                    row = np.zeros(nvar)
                    row[idx(axis, seg, 0):idx(axis, seg, 0) + n + 1] = r
                    rows.append(row)
                    lo.append(-limits.vel[axis])
                    hi.append(limits.vel[axis])
                    n_dyn += 1
                for r in acc_map:
                    row = np.zeros(nvar)
                    row[idx(axis, seg, 0):idx(axis, seg, 0) + n + 1] = r
                    rows.append(row)
                    lo.append(-limits.acc[axis])
                    hi.append(limits.acc[axis])
                    n_dyn += 1

    qp = QpProblem(P=P, q=np.zeros(nvar), A=np.array(rows),
                   l=np.array(lo), u=np.array(hi))
    meta = {
        "degree": n,
        "durations": durations,
        "n_equalities": sum(1 for a, b in zip(lo, hi) if a == b),
        "n_corridor": n_corridor,
        "n_dynamic": n_dyn,
        "index": idx,
    }
    return qp, meta


def _hodograph_matrix(n: int, duration: float, order: int) -> np.ndarray:
    """Linear map from control points to order-th derivative control points."""
    mat = np.eye(n + 1)
    k = n
    for _ in range(order):
        D = np.zeros((mat.shape[0] - 1, mat.shape[0]))
        for i in range(mat.shape[0] - 1):
            D[i, i] = -k / duration
            D[i, i + 1] = k / duration
        mat = D @ mat
        k -= 1
    return mat


def solution_to_trajectory(sol: QpSolution, durations: np.ndarray, degree: int,
                           t_start: float = 0.0, yaw: float = 0.0) -> PiecewiseBezier:
    durations = np.asarray(durations, dtype=float).reshape(-1)
    S = len(durations)
    n = degree
    per_axis = S * (n + 1)
    segments = []
    for seg in range(S):
        ctrl = np.zeros((3, n + 1))
        for axis in range(3):
            a = axis * per_axis + seg * (n + 1)
            ctrl[axis] = sol.x[a:a + n + 1]
        segments.append(BezierSegment(ctrl=ctrl, duration=float(durations[seg])))
    return PiecewiseBezier(segments=segments, t_start=t_start, yaw=yaw,
                           cost=sol.objective)


def search_time_allocation(build, allocation: TimeAllocationSet
                           ) -> tuple[np.ndarray, QpSolution]:
    """Solve the QP for every candidate allocation and keep the cheapest
    feasible one. build(durations) must return (QpProblem, meta)."""
    if not allocation.candidates:
        raise NoFeasibleTimeError("empty allocation set")
    best = None
    for durations in allocation.candidates:
        try:
            qp, _ = build(durations)
        except PlannerError:
            continue
        sol = solve(qp, eps_abs=1e-8, eps_rel=1e-8, max_iter=20000)
        if sol.status != "solved" or sol.primal_residual > 1e-6:
            continue
        if best is None or sol.objective < best[1].objective:
            best = (np.asarray(durations, dtype=float), sol)
    if best is None:
        raise NoFeasibleTimeError("no candidate allocation was feasible")
    return best


def plan_landing(start: FlatOutput, end: FlatOutput, vsfc: Vsfc | None,
                 limits: DynamicLimits, degree: int = 7,
                 t_start: float = 0.0, yaw: float = 0.0,
                 count: int = 8, span: float = 4.0) -> PiecewiseBezier:
    """Time-allocation search plus final solve, returning the trajectory.

    Segment fractions follow the straight-line path split at the corridor's
    touchdown ceiling, clamped to [0.2, 0.8].
    """
    delta = end.position - start.position
    distance = float(np.linalg.norm(delta))
    if distance < 1e-6:
        raise PlannerError("start and end coincide")
    if vsfc is not None and abs(delta[2]) > 1e-9:
        frac_touch = np.clip(
            (vsfc.h_touchdown - end.position[2]) / abs(delta[2]), 0.2, 0.8
        )
    else:
        frac_touch = 0.5
    fractions = np.array([1.0 - frac_touch, frac_touch])
    allocation = make_time_allocation(distance, limits, fractions, count, span)

    def build(durations):
        return assemble_qp(vsfc, limits, start, end, durations, degree)

    durations, sol = search_time_allocation(build, allocation)
    return solution_to_trajectory(sol, durations, degree, t_start=t_start, yaw=yaw)
