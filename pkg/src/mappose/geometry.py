"""Homogeneous projective primitives, rotations and the pinhole camera.

Conventions
-----------
World frame: local East-North-Up, meters, ground at z = 0.

Camera frame: x right, y down, z forward (optical axis).

Image frame: pixel (row r, column c) has its center at image coordinate
(x=c, y=r).

A :class:`Pose` stores the world->camera rotation ``R`` and a translation
``t`` such that a world point ``X`` maps to camera coordinates
``R @ (X + t)``; the camera center is therefore ``-t``.

Image lines are homogeneous 3-vectors expressed in K^-1-normalized
coordinates and scaled to unit length, so that ``l @ K^-1 [u, v, 1]`` is
zero for every pixel ``(u, v)`` on the line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSegment, ParallelDegenerate

EZ = np.array([0.0, 0.0, 1.0])

_PARALLEL_EPS = 1e-12


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("zero vector cannot be normalized")
    return v / n


def intersect(l1, l2) -> np.ndarray:
    """Meeting point of two homogeneous lines as a unit 3-vector.

    Raises:
        ParallelDegenerate: if the lines coincide (cross product vanishes).
    """
    l1 = np.asarray(l1, dtype=float)
    l2 = np.asarray(l2, dtype=float)
    p = np.cross(l1, l2)
    n = np.linalg.norm(p)
    if n < _PARALLEL_EPS * np.linalg.norm(l1) * np.linalg.norm(l2) or n == 0.0:
        raise ParallelDegenerate("lines are identical; intersection undefined")
    return p / n


def angular_error(p, l) -> float:
    """Deviation from incidence between point ``p`` and line ``l``, degrees.

    Zero when ``p`` lies on ``l``; 90 when ``p`` is the line's pole.
    """
    p = np.asarray(p, dtype=float)
    l = np.asarray(l, dtype=float)
    c = float(p @ l) / (np.linalg.norm(p) * np.linalg.norm(l))
    return math.degrees(abs(math.asin(min(1.0, max(-1.0, c)))))


def angular_errors(points: np.ndarray, lines: np.ndarray) -> np.ndarray:
    """Vectorized :func:`angular_error` for unit rows; shape (n_points, n_lines)."""
    c = np.clip(np.atleast_2d(points) @ np.atleast_2d(lines).T, -1.0, 1.0)
    return np.degrees(np.abs(np.arcsin(c)))


def hat(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_from_axis_angle(axis, theta: float) -> np.ndarray:
    """Exponential map of ``theta * axis`` (Rodrigues' formula)."""
    if theta == 0.0:
        return np.eye(3)
    u = unit(axis)
    K = hat(u)
    return np.eye(3) + math.sin(theta) * K + (1.0 - math.cos(theta)) * (K @ K)


def axis_angle_from_rotation(R) -> tuple[np.ndarray, float]:
    """Inverse of :func:`rotation_from_axis_angle`; theta in [0, pi].

    The axis is arbitrary (x) for the identity.
    """
    R = np.asarray(R, dtype=float)
    theta = rotation_angle(R)
    if theta < 1e-12:
        return np.array([1.0, 0.0, 0.0]), 0.0
    if math.pi - theta > 1e-6:
        w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        return unit(w), theta
    # near pi: R = 2 u u^T - I
    B = (R + np.eye(3)) / 2.0
    i = int(np.argmax(np.diag(B)))
    u = B[:, i] / math.sqrt(max(B[i, i], 1e-300))
    return unit(u), theta


def rotation_angle(R) -> float:
    """Geodesic angle of a rotation matrix in radians, robust near 0 and pi."""
    R = np.asarray(R, dtype=float)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = np.linalg.norm(w) / 2.0
    c = (np.trace(R) - 1.0) / 2.0
    return math.atan2(s, c)


def rotation_between(a, b) -> np.ndarray:
    """Minimal rotation taking unit direction ``a`` onto unit direction ``b``."""
    a = unit(a)
    b = unit(b)
    axis = np.cross(a, b)
    c = float(np.clip(a @ b, -1.0, 1.0))
    if np.linalg.norm(axis) < 1e-15:
        if c > 0:
            return np.eye(3)
        # antiparallel: any axis orthogonal to a
        ref = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        return rotation_from_axis_angle(np.cross(a, ref), math.pi)
    return rotation_from_axis_angle(axis, math.acos(c))


def compose(rv, rh) -> np.ndarray:
    """Chain two rotations: ``rv @ rh``."""
    return np.asarray(rv, dtype=float) @ np.asarray(rh, dtype=float)


def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def is_rotation(R, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        return False
    return (
        np.linalg.norm(R.T @ R - np.eye(3)) <= tol
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


def orthonormalize(R) -> np.ndarray:
    """Closest rotation to ``R`` in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=float))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def quaternion_from_rotation(R) -> np.ndarray:
    """Unit quaternion ``[w, x, y, z]`` with ``w >= 0``."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return -q if q[0] < 0 else q


def rotation_from_quaternion(q) -> np.ndarray:
    w, x, y, z = unit(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def inverse(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def normalize_points(self, pts) -> np.ndarray:
        """Pixels (n, 2) -> homogeneous normalized rays (n, 3)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return np.column_stack(
            [(pts[:, 0] - self.cx) / self.fx, (pts[:, 1] - self.cy) / self.fy, np.ones(len(pts))]
        )

    def line_to_pixels(self, line) -> np.ndarray:
        """Normalized line coefficients -> pixel-space coefficients."""
        return self.inverse.T @ np.asarray(line, dtype=float)


@dataclass(frozen=True, eq=False)
class Pose:
    """Camera pose: ``x_cam = rotation @ (X + translation)``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.array(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.array(self.translation, dtype=float).reshape(3))

    @classmethod
    def from_position(cls, rotation, position) -> "Pose":
        return cls(rotation, -np.asarray(position, dtype=float))

    @classmethod
    def on_ground(cls, rotation, xy, height: float = 1.6) -> "Pose":
        return cls.from_position(rotation, [xy[0], xy[1], height])

    @property
    def position(self) -> np.ndarray:
        return -self.translation

    @property
    def camera_to_world(self) -> np.ndarray:
        return self.rotation.T

    @property
    def view_direction(self) -> np.ndarray:
        """Optical axis in world coordinates."""
        return self.rotation[2]

    @property
    def heading(self) -> float:
        """Bearing of the horizontal projection of the optical axis, radians from east."""
        v = self.view_direction
        return math.atan2(v[1], v[0])

    @property
    def up_in_camera(self) -> np.ndarray:
        """World +z expressed in camera coordinates."""
        return self.rotation @ EZ

    def with_position(self, position) -> "Pose":
        return Pose.from_position(self.rotation, position)

    def with_rotation(self, rotation) -> "Pose":
        return Pose(rotation, self.translation)

    def to_camera(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return (X + self.translation) @ self.rotation.T

    def project(self, X, K: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
        """Project world points; returns (pixels (n, 2), depths (n,))."""
        Xc = self.to_camera(X)
        z = Xc[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = K.fx * Xc[:, 0] / z + K.cx
            v = K.fy * Xc[:, 1] / z + K.cy
        return np.column_stack([u, v]), z

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    def __repr__(self):
        return f"Pose(position={self.position.round(4).tolist()}, heading={math.degrees(self.heading):.3f}deg)"


def normalize_image_line(p0, p1, K: CameraIntrinsics) -> np.ndarray:
    """Unit line through two pixels, in K^-1-normalized coordinates.

    Raises:
        DegenerateSegment: if the endpoints coincide within 1e-9 px.
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    if np.linalg.norm(p1 - p0) < 1e-9:
        raise DegenerateSegment(f"segment endpoints coincide: {p0.tolist()}")
    a, b = K.normalize_points([p0, p1])
    return unit(np.cross(a, b))


def normalize_image_lines(segs: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Vectorized :func:`normalize_image_line` for an (n, 4) array."""
    segs = np.atleast_2d(np.asarray(segs, dtype=float))
    a = K.normalize_points(segs[:, :2])
    b = K.normalize_points(segs[:, 2:4])
    l = np.cross(a, b)
    n = np.linalg.norm(l, axis=1)
    if np.any(np.hypot(segs[:, 2] - segs[:, 0], segs[:, 3] - segs[:, 1]) < 1e-9):
        raise DegenerateSegment("segment endpoints coincide")
    return l / n[:, None]
