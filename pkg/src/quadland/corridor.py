"""Visibility-safety flight corridor construction.

The landing free space is an axis-aligned box spanning the start and
touchdown states, clipped above the platform occupancy. It is split into
a rear cell and a touchdown cell at the touchdown height, dilated for
junction overlap, intersected with the camera frustum halfspaces, and
finally shrunk by the vehicle radius. Both cells are convex halfspace
intersections, so trajectories whose control points satisfy them stay
visible and collision-free.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .camera import CameraRig


class CorridorError(ValueError):
    pass


class InfeasibleCorridorError(CorridorError):
    """Construction produced an empty polyhedron."""


@dataclass
class Halfspace:
    """Points satisfying a . x <= b, with a a unit normal."""

    a: np.ndarray
    b: float

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float).reshape(3)
        norm = np.linalg.norm(self.a)
        if abs(norm - 1.0) > 1e-9:
            if norm < 1e-12:
                raise CorridorError("halfspace normal is zero")
            self.b = float(self.b) / norm
            self.a = self.a / norm
        self.b = float(self.b)

    def contains(self, pts: np.ndarray, slack: float = 0.0) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, 3)
        return pts @ self.a <= self.b + slack


@dataclass
class Polyhedron:
    halfspaces: list

    def matrix_form(self) -> tuple[np.ndarray, np.ndarray]:
        A = np.array([h.a for h in self.halfspaces])
        b = np.array([h.b for h in self.halfspaces])
        return A, b

    def contains(self, pts: np.ndarray, slack: float = 0.0) -> np.ndarray:
        A, b = self.matrix_form()
        pts = np.asarray(pts, dtype=float).reshape(-1, 3)
        return np.all(pts @ A.T <= b[None, :] + slack, axis=1)

    def dilated(self, amount: float) -> "Polyhedron":
        return Polyhedron([Halfspace(h.a.copy(), h.b + amount) for h in self.halfspaces])

    def intersect(self, other: "Polyhedron") -> "Polyhedron":
        return Polyhedron(list(self.halfspaces) + list(other.halfspaces))

    def interior_point(self) -> tuple[np.ndarray, float]:
        """Chebyshev center and radius; raises if the interior is empty.

        Solved as the linear program max r s.t. a_i . x + r <= b_i.
        """
        A, b = self.matrix_form()
        m = len(b)
        A_ub = np.hstack([A, np.ones((m, 1))])
        c = np.array([0.0, 0.0, 0.0, -1.0])
        res = linprog(c, A_ub=A_ub, b_ub=b, bounds=[(None, None)] * 3 + [(0, None)],
                      method="highs")
        if not res.success or res.x[3] <= 1e-9:
            raise InfeasibleCorridorError("polyhedron has empty interior")
        return res.x[:3], float(res.x[3])


def box_polyhedron(lo: np.ndarray, hi: np.ndarray) -> Polyhedron:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(hi <= lo):
        raise CorridorError("degenerate box")
    halfspaces = []
    for k in range(3):
        e = np.zeros(3)
        e[k] = 1.0
        halfspaces.append(Halfspace(e.copy(), hi[k]))
        halfspaces.append(Halfspace(-e, -lo[k]))
    return Polyhedron(halfspaces)


@dataclass
class Vsfc:
    """Two-cell landing corridor: rear approach and touchdown."""

    rear: Polyhedron
    touchdown: Polyhedron
    h_touchdown: float
    dilate: float
    shrink: float
    robot_radius: float

    def cells(self) -> list:
        return [self.rear, self.touchdown]

    def validate(self):
        self.rear.interior_point()
        self.touchdown.interior_point()
        self.rear.intersect(self.touchdown).interior_point()


def build_landing_space(x0: np.ndarray, x_target: np.ndarray,
                        occupancy: list | None = None,
                        margin: float = 0.3) -> Polyhedron:
    """Axis-aligned free-space box containing both endpoint states.

    occupancy is a list of (lo, hi) axis-aligned boxes; the free space is
    clipped to stay above any occupancy box that spans it laterally (the
    platform body is the canonical case).
    """
    x0 = np.asarray(x0, dtype=float).reshape(3)
    x_target = np.asarray(x_target, dtype=float).reshape(3)
    if np.allclose(x0, x_target):
        raise CorridorError("start and target coincide")
    lo = np.minimum(x0, x_target) - margin
    hi = np.maximum(x0, x_target) + margin
    for occ_lo, occ_hi in occupancy or []:
        occ_lo = np.asarray(occ_lo, dtype=float)
        occ_hi = np.asarray(occ_hi, dtype=float)
        # Clip the floor above slab-like occupancies.
        if occ_hi[2] < hi[2] and occ_hi[2] > lo[2]:
            lo = lo.copy()
            lo[2] = occ_hi[2]
    if np.any(hi <= lo):
        raise InfeasibleCorridorError("endpoints inseparable from occupancy")
    poly = box_polyhedron(lo, hi)
    inside = poly.contains(np.vstack([x0, x_target]), slack=1e-9)
    if not np.all(inside):
        raise InfeasibleCorridorError("endpoint clipped out of the free space")
    return poly


def segment_and_dilate(space: Polyhedron, h_touchdown: float,
                       dilate: float, overlap: float | None = None
                       ) -> tuple[Polyhedron, Polyhedron]:
    """Split the free space at the touchdown height and dilate both cells.

    The rear cell's floor sits overlap below the touchdown ceiling (default
    2 * dilate) so the dilated cells share interior volume.
    """
    A, b = space.matrix_form()
    z_hi = min(b[i] for i in range(len(b)) if np.allclose(A[i], [0, 0, 1]))
    z_lo = -min(b[i] for i in range(len(b)) if np.allclose(A[i], [0, 0, -1]))
    if not z_lo < h_touchdown < z_hi:
        raise CorridorError("touchdown height outside the space's vertical extent")
    if overlap is None:
        overlap = 2.0 * dilate
    touchdown = space.intersect(
        Polyhedron([Halfspace(np.array([0.0, 0.0, 1.0]), h_touchdown)])
    )
    rear = space.intersect(
        Polyhedron([Halfspace(np.array([0.0, 0.0, -1.0]), -(h_touchdown - overlap))])
    )
    rear = rear.dilated(dilate)
    touchdown = touchdown.dilated(dilate)
    if dilate > 0 or overlap > 0:
        try:
            rear.intersect(touchdown).interior_point()
        except InfeasibleCorridorError:
            raise CorridorError("cells do not overlap after dilation")
    return rear, touchdown


def fov_halfspaces(rig: CameraRig) -> list:
    """Four halfspaces bounding the camera's view frustum.

    Each boundary plane contains the camera center and one frustum side;
    points satisfying all four lie inside the horizontal and vertical
    field of view.
    """
    half_w = np.radians(rig.fov_deg[0]) / 2.0
    half_h = np.radians(rig.fov_deg[1]) / 2.0
    tan_w, tan_h = np.tan(half_w), np.tan(half_h)
    # Outward normals in the camera frame (z forward, x right, y down).
    normals_cam = [
        np.array([1.0, 0.0, -tan_w]),
        np.array([-1.0, 0.0, -tan_w]),
        np.array([0.0, 1.0, -tan_h]),
        np.array([0.0, -1.0, -tan_h]),
    ]
    out = []
    for n in normals_cam:
        a = rig.rotation @ (n / np.linalg.norm(n))
        out.append(Halfspace(a, float(a @ rig.position)))
    return out


def assemble_vsfc(rear: Polyhedron, touchdown: Polyhedron, fov: list,
                  shrink: float, robot_radius: float,
                  h_touchdown: float = 0.0, dilate: float = 0.0) -> Vsfc:
    """Intersect cells with the frustum and shrink by the vehicle radius."""
    frustum = Polyhedron(list(fov))
    amount = -shrink * robot_radius
    cells = []
    for cell in (rear, touchdown):
        merged = cell.intersect(frustum).dilated(amount)
        cells.append(merged)
    vsfc = Vsfc(rear=cells[0], touchdown=cells[1], h_touchdown=h_touchdown,
                dilate=dilate, shrink=shrink, robot_radius=robot_radius)
    try:
        vsfc.validate()
    except InfeasibleCorridorError as exc:
        raise InfeasibleCorridorError(
            f"corridor empty after shrink by {shrink * robot_radius:.3f} m"
        ) from exc
    return vsfc


def build_default_vsfc(x0: np.ndarray, x_target: np.ndarray, rig: CameraRig,
                       h_touchdown: float = 0.35, dilate: float = 0.15,
                       shrink: float = 1.0, robot_radius: float = 0.13,
                       margin: float = 0.3,
                       occupancy: list | None = None) -> Vsfc:
    """Full corridor pipeline with the platform slab as default occupancy."""
    if occupancy is None:
        occupancy = [(np.array([-5.0, -5.0, -1.0]), np.array([5.0, 5.0, 0.0]))]
    space = build_landing_space(x0, x_target, occupancy, margin)
    rear, touchdown = segment_and_dilate(space, h_touchdown, dilate)
    fov = fov_halfspaces(rig)
    return assemble_vsfc(rear, touchdown, fov, shrink, robot_radius,
                         h_touchdown=h_touchdown, dilate=dilate)


def export_csv_rows(vsfc: Vsfc) -> list:
    """Rows (cell, a_x, a_y, a_z, b) for the plotting component."""
    rows = []
    for name, cell in (("rear", vsfc.rear), ("touchdown", vsfc.touchdown)):
        for h in cell.halfspaces:
            rows.append((name, h.a[0], h.a[1], h.a[2], h.b))
    return rows
