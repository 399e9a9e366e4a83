"""Angles, pinhole projection, 3D box corners and BEV rectangles.

Camera frame follows KITTI: x right, y down, z forward.  ``theta`` is the
box yaw about the vertical axis (KITTI ``rotation_y``); at ``theta = 0`` the
box length runs along +x.  A box location ``(x, y, z)`` is the centre of its
bottom face.
"""
from dataclasses import dataclass, replace
import math

import numpy as np

from . import kernels
from .errors import GeometryError

TWO_PI = 2.0 * math.pi
NEAR_PLANE = 1e-3


def wrap_angle(a):
    """Map an angle to ``[-pi, pi)``."""
    a = float(a)
    if not math.isfinite(a):
        raise GeometryError(f"cannot wrap non-finite angle {a!r}")
    if -math.pi <= a < math.pi:
        return a
    r = math.fmod(a + math.pi, TWO_PI)
    if r < 0.0:
        r += TWO_PI
    r -= math.pi
    if r >= math.pi:
        r -= TWO_PI
    return r


def angle_diff(a, b):
    """Absolute wrapped difference between two angles, in ``[0, pi]``."""
    return abs(wrap_angle(a - b))


def alpha_from_theta(theta, x, z):
    if x == 0.0 and z == 0.0:
        raise GeometryError("observation angle undefined at the camera origin")
    return wrap_angle(theta - math.atan2(x, z))


def theta_from_alpha(alpha, x, z):
    if x == 0.0 and z == 0.0:
        raise GeometryError("yaw undefined at the camera origin")
    return wrap_angle(alpha + math.atan2(x, z))


def corrected_render_orientation(theta, x, z):
    """Viewpoint angle used to pick a sprite: ``theta + atan(x / z)``.

    Two cars with the same yaw at different lateral offsets are seen from
    different directions; the correction puts both on a common scale.
    """
    if not z > 0.0:
        raise GeometryError(f"render orientation needs z > 0, got z={z}")
    return wrap_angle(theta + math.atan(x / z))


@dataclass(frozen=True)
class BevRect:
    center: tuple
    half_extents: tuple
    theta: float

    def __post_init__(self):
        if not (self.half_extents[0] > 0 and self.half_extents[1] > 0):
            raise GeometryError(f"half extents must be positive, got {self.half_extents}")

    def as_array(self):
        return np.array(
            [self.center[0], self.center[1], self.half_extents[0], self.half_extents[1], self.theta],
            dtype=np.float64,
        )

    @property
    def area(self):
        return 4.0 * self.half_extents[0] * self.half_extents[1]


@dataclass(frozen=True)
class Box3D:
    """Eight-parameter box ``[x, y, z, h, w, l, theta, alpha]``.

    Only seven are free; ``alpha`` is the observation angle derived from
    ``theta`` and the viewing ray.  Use :meth:`make` to get it computed.
    """

    x: float
    y: float
    z: float
    h: float
    w: float
    l: float
    theta: float
    alpha: float = 0.0

    @classmethod
    def make(cls, x, y, z, h, w, l, theta):
        theta = wrap_angle(theta)
        return cls(float(x), float(y), float(z), float(h), float(w), float(l), theta,
                   alpha_from_theta(theta, x, z))

    @classmethod
    def from_vector(cls, v):
        """Build from the 7-vector ``(x, y, z, h, w, l, theta)``."""
        return cls.make(*(float(c) for c in v[:7]))

    @property
    def vector(self):
        return np.array([self.x, self.y, self.z, self.h, self.w, self.l, self.theta])

    @property
    def loc(self):
        return np.array([self.x, self.y, self.z])

    @property
    def dims(self):
        return np.array([self.h, self.w, self.l])

    def with_loc(self, x, y, z):
        """Same size and yaw at a new location, observation angle refreshed."""
        return replace(self, x=float(x), y=float(y), z=float(z),
                       alpha=alpha_from_theta(self.theta, x, z))

    def bev(self):
        return BevRect((self.x, self.z), (self.l / 2.0, self.w / 2.0), self.theta)

    def bev_array(self):
        return np.array([self.x, self.z, self.l / 2.0, self.w / 2.0, self.theta])

    def alpha_consistent(self, tol=1e-9):
        return angle_diff(self.alpha, alpha_from_theta(self.theta, self.x, self.z)) <= tol


def bev_rows(boxes):
    """Stack boxes into the ``(n, 5)`` rect layout used by the kernels."""
    if len(boxes) == 0:
        return np.zeros((0, 5))
    return np.array([b.bev_array() for b in boxes], dtype=np.float64)


def bev_iou(a, b):
    """Overlap-over-union of two BEV rectangles (or boxes)."""
    ra = a.bev_array() if isinstance(a, Box3D) else a.as_array()
    rb = b.bev_array() if isinstance(b, Box3D) else b.as_array()
    return float(kernels.iou_pair(ra, rb))


def _proj_matrix(calib):
    return np.asarray(calib.P if hasattr(calib, "P") else calib, dtype=np.float64)


def project_point(calib, point):
    """Pixel coordinates ``(u, v)`` of a camera-frame point."""
    P = _proj_matrix(calib)
    hom = P @ np.append(np.asarray(point, dtype=np.float64), 1.0)
    if not hom[2] > 0.0:
        raise GeometryError(f"point {tuple(point)} is behind the camera")
    return float(hom[0] / hom[2]), float(hom[1] / hom[2])


def project_points(calib, points):
    """Vectorised projection; returns ``(uv, depth)`` without any depth check."""
    P = _proj_matrix(calib)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    hom = pts @ P[:, :3].T + P[:, 3]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = hom[:, :2] / hom[:, 2:3]
    return uv, hom[:, 2]


# corner sign table: (length, vertical, width); rows 0-3 base, 4-7 roof
_CORNER_SIGNS = np.array(
    [
        [1, 0, 1], [1, 0, -1], [-1, 0, -1], [-1, 0, 1],
        [1, -1, 1], [1, -1, -1], [-1, -1, -1], [-1, -1, 1],
    ],
    dtype=np.float64,
)
_EDGES = (
    (0, 1), (1, 2), (2, 3), (3, 0),
    (4, 5), (5, 6), (6, 7), (7, 4),
    (0, 4), (1, 5), (2, 6), (3, 7),
)


def box_corners(box):
    """The eight cuboid corners, shape ``(8, 3)``; first four on the base face."""
    local = _CORNER_SIGNS * np.array([box.l / 2.0, box.h, box.w / 2.0])
    c, s = math.cos(box.theta), math.sin(box.theta)
    rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return local @ rot.T + np.array([box.x, box.y, box.z])


def project_box(calib, box, clip=True):
    """Axis-aligned 2D hull ``(left, top, right, bottom)`` of a projected box.

    Edges crossing the near plane are cut there, so partly visible boxes get a
    correct hull.  With ``clip`` the hull is intersected with the image; an
    empty intersection returns ``None``.  A box fully behind the camera raises.
    """
    P = _proj_matrix(calib)
    corners = box_corners(box)
    depth = corners @ P[2, :3] + P[2, 3]
    front = depth > NEAR_PLANE
    if not front.any():
        raise GeometryError("box lies entirely behind the camera")
    pts = [corners[front]]
    if not front.all():
        cut = []
        for i, j in _EDGES:
            if front[i] != front[j]:
                t = (NEAR_PLANE - depth[i]) / (depth[j] - depth[i])
                cut.append(corners[i] + t * (corners[j] - corners[i]))
        pts.append(np.array(cut))
    uv, _ = project_points(P, np.vstack(pts))
    left, top = uv.min(axis=0)
    right, bottom = uv.max(axis=0)
    if not clip:
        return float(left), float(top), float(right), float(bottom)
    width, height = calib.image_size
    left, right = max(left, 0.0), min(right, float(width))
    top, bottom = max(top, 0.0), min(bottom, float(height))
    if right <= left or bottom <= top:
        return None
    return float(left), float(top), float(right), float(bottom)


def fully_in_front(calib, box, near=NEAR_PLANE):
    P = _proj_matrix(calib)
    depth = box_corners(box) @ P[2, :3] + P[2, 3]
    return bool(np.all(depth > near))


def backproject_to_ground(calib, u, v, ground_y):
    """Intersect the viewing ray through pixel ``(u, v)`` with the plane ``y = ground_y``.

    Returns ``(x, z)`` or ``None`` when the ray misses the plane in front of
    the camera (pixels on or above the horizon).
    """
    P = _proj_matrix(calib)
    # unknowns (x, z, s):  P[:, [0, 2]] @ (x, z) - s * (u, v, 1) = -(P[:, 1] * y + P[:, 3])
    A = np.column_stack([P[:, 0], P[:, 2], -np.array([u, v, 1.0])])
    rhs = -(P[:, 1] * ground_y + P[:, 3])
    try:
        x, z, s = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        return None
    if not (s > NEAR_PLANE and z > 0.0):
        return None
    return float(x), float(z)
