"""Core geometric types shared by every stage: bounded planes, poses, bases.

Conventions used throughout the package:

* Points are float64 arrays of shape (3,), point sets are (N, 3).
* A bounded plane is a center point plus two orthogonal full-edge span
  vectors; the occupied patch is ``{c + a*span_x + b*span_y : a, b in
  [-1/2, 1/2]}``.
* A pose is a rotation matrix ``R`` and translation ``t``. An absolute pose
  maps sensor-frame points into the world via ``p_w = R @ p + t``.
* Pose composition follows ``R_k = R_rel @ R_parent`` and
  ``t_k = t_parent + R_parent @ t_rel``, i.e. the relative rotation is a
  world-frame increment while the relative translation is expressed in the
  parent body frame. :func:`relative_pose` is the exact inverse of
  :func:`compose` and defines what "relative pose" means everywhere else
  (odometry measurements, graph edges).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "GeometryError",
    "InvalidPlaneError",
    "InvalidPoseError",
    "InvalidBasisError",
    "ORTHO_TOL",
    "skew",
    "so3_exp",
    "so3_log",
    "rot_x",
    "rot_y",
    "rot_z",
    "Pose",
    "Basis",
    "Plane",
    "PointCloud",
    "PlaneSet",
    "plane_basis",
    "plane_corners",
    "to_basis",
    "from_basis",
    "transform_plane",
    "compose",
    "relative_pose",
    "rotation_angle_between",
]

# Absolute tolerance for orthonormality / unit-determinant checks.
ORTHO_TOL = 1e-9


class GeometryError(ValueError):
    """Base class for invalid geometric inputs."""


class InvalidPlaneError(GeometryError):
    pass


class InvalidPoseError(GeometryError):
    pass


class InvalidBasisError(GeometryError):
    pass


def _as_vec3(v, name: str = "vector") -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.shape != (3,):
        raise GeometryError(f"{name} must have shape (3,), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise GeometryError(f"{name} has non-finite components")
    return a


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


def skew(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix such that ``skew(v) @ u == cross(v, u)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues exponential map from a rotation vector to a matrix."""
    w = np.asarray(w, dtype=float)
    angle = float(np.linalg.norm(w))
    W = skew(w)
    if angle < 1e-10:
        # Second-order series keeps orthonormality to machine precision.
        return np.eye(3) + W + 0.5 * (W @ W)
    a, b = math.sin(angle) / angle, (1.0 - math.cos(angle)) / angle**2
    return np.eye(3) + a * W + b * (W @ W)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector of ``R`` (inverse of :func:`so3_exp`)."""
    cos_angle = min(1.0, max(-1.0, 0.5 * (np.trace(R) - 1.0)))
    angle = math.acos(cos_angle)
    axis_raw = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if angle < 1e-10:
        return 0.5 * axis_raw
    if math.pi - angle < 1e-6:
        # Near pi the off-diagonal difference vanishes; recover the axis from
        # the dominant diagonal entry of R + I.
        A = R + np.eye(3)
        k = int(np.argmax(np.diag(A)))
        axis = A[:, k] / np.linalg.norm(A[:, k])
        if np.dot(axis, axis_raw) < 0:
            axis = -axis
        return angle * axis
    return (0.5 * angle / math.sin(angle)) * axis_raw


def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Project ``R`` onto the nearest rotation matrix (SVD polar factor)."""
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, float(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


@dataclass(frozen=True)
class Pose:
    """Rigid transform (rotation matrix + translation vector)."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float)
        t = _as_vec3(self.t, "translation")
        if R.shape != (3, 3):
            raise InvalidPoseError(f"rotation must be 3x3, got {R.shape}")
        if not np.all(np.isfinite(R)):
            raise InvalidPoseError("rotation has non-finite entries")
        if np.max(np.abs(R.T @ R - np.eye(3))) > ORTHO_TOL:
            raise InvalidPoseError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise InvalidPoseError("rotation determinant is not +1")
        object.__setattr__(self, "R", _readonly(R))
        object.__setattr__(self, "t", _readonly(t))

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point (3,) or a stack (N, 3)."""
        p = np.asarray(points, dtype=float)
        return p @ self.R.T + self.t


@dataclass(frozen=True)
class Basis:
    """Right-handed orthonormal frame stored column-wise as [b_x, b_y, b_z]."""

    matrix: np.ndarray

    def __post_init__(self):
        B = np.asarray(self.matrix, dtype=float)
        if B.shape != (3, 3):
            raise InvalidBasisError(f"basis must be 3x3, got {B.shape}")
        if np.max(np.abs(B.T @ B - np.eye(3))) > ORTHO_TOL:
            raise InvalidBasisError("basis columns are not orthonormal")
        if abs(np.linalg.det(B) - 1.0) > ORTHO_TOL:
            raise InvalidBasisError("basis is not right-handed")
        if np.max(np.abs(np.cross(B[:, 0], B[:, 1]) - B[:, 2])) > ORTHO_TOL:
            raise InvalidBasisError("b_z != b_x x b_y")
        object.__setattr__(self, "matrix", _readonly(B))

    @property
    def b_x(self) -> np.ndarray:
        return self.matrix[:, 0]

    @property
    def b_y(self) -> np.ndarray:
        return self.matrix[:, 1]

    @property
    def b_z(self) -> np.ndarray:
        return self.matrix[:, 2]


@dataclass(frozen=True)
class Plane:
    """Rectangular bounded plane: center plus two orthogonal full-edge spans."""

    center: np.ndarray
    span_x: np.ndarray
    span_y: np.ndarray

    def __post_init__(self):
        c = _as_vec3(self.center, "center")
        px = _as_vec3(self.span_x, "span_x")
        py = _as_vec3(self.span_y, "span_y")
        nx, ny = np.linalg.norm(px), np.linalg.norm(py)
        if nx == 0.0 or ny == 0.0:
            raise InvalidPlaneError("span vectors must be non-zero")
        if abs(float(px @ py)) > ORTHO_TOL * nx * ny:
            raise InvalidPlaneError("span vectors are not orthogonal")
        object.__setattr__(self, "center", _readonly(c))
        object.__setattr__(self, "span_x", _readonly(px))
        object.__setattr__(self, "span_y", _readonly(py))

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(self.span_x / np.linalg.norm(self.span_x),
                     self.span_y / np.linalg.norm(self.span_y))
        return n / np.linalg.norm(n)

    @property
    def distance_to_origin(self) -> float:
        return float(self.normal @ self.center)

    @property
    def area(self) -> float:
        return float(np.linalg.norm(self.span_x) * np.linalg.norm(self.span_y))

    def corners(self) -> np.ndarray:
        """Counter-clockwise corner loop, shape (4, 3)."""
        h = 0.5 * (self.span_x + self.span_y)
        g = 0.5 * (self.span_x - self.span_y)
        return np.stack([self.center - h, self.center + g,
                         self.center + h, self.center - g])


@dataclass(frozen=True)
class PointCloud:
    """Unorganized 3D point cloud for one scan."""

    points: np.ndarray
    frame_id: int = 0

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        if p.ndim != 2 or p.shape[1] != 3:
            raise GeometryError(f"points must be (N, 3), got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise GeometryError("point cloud has non-finite coordinates")
        if self.frame_id < 0:
            raise GeometryError("frame_id must be non-negative")
        object.__setattr__(self, "points", _readonly(p))

    def __len__(self) -> int:
        return self.points.shape[0]


class PlaneSet:
    """Ordered collection of planes with cached normals / origin distances."""

    def __init__(self, planes: Sequence[Plane] = ()):
        self.planes: tuple[Plane, ...] = tuple(planes)
        n = len(self.planes)
        self.normals = _readonly(
            np.stack([p.normal for p in self.planes]) if n else np.empty((0, 3)))
        self.centers = _readonly(
            np.stack([p.center for p in self.planes]) if n else np.empty((0, 3)))
        self.distances = _readonly(
            np.einsum("ij,ij->i", self.normals, self.centers) if n else np.empty(0))

    def __len__(self) -> int:
        return len(self.planes)

    def __iter__(self) -> Iterator[Plane]:
        return iter(self.planes)

    def __getitem__(self, i: int) -> Plane:
        return self.planes[i]

    def transformed(self, pose: Pose) -> "PlaneSet":
        return PlaneSet([transform_plane(p, pose) for p in self.planes])

    @cached_property
    def _basis_stack(self) -> np.ndarray:
        """(n, 3, 3) stack of per-plane basis matrices (for batched queries)."""
        if not self.planes:
            return np.empty((0, 3, 3))
        return np.stack([plane_basis(p).matrix for p in self.planes])

    @cached_property
    def _half_extents(self) -> np.ndarray:
        """(n, 2) half edge lengths along each plane's in-plane axes."""
        if not self.planes:
            return np.empty((0, 2))
        return 0.5 * np.array(
            [[np.linalg.norm(p.span_x), np.linalg.norm(p.span_y)] for p in self.planes])


def plane_basis(p: Plane) -> Basis:
    """Orthonormal frame of a plane; the third column is its unit normal."""
    nx, ny = np.linalg.norm(p.span_x), np.linalg.norm(p.span_y)
    if nx == 0.0 or ny == 0.0:
        raise InvalidPlaneError("degenerate span vectors")
    bx, by = p.span_x / nx, p.span_y / ny
    bz = np.cross(bx, by)
    bz /= np.linalg.norm(bz)
    return Basis(np.column_stack([bx, by, bz]))


def plane_corners(p: Plane) -> np.ndarray:
    return p.corners()


def to_basis(points: np.ndarray, basis: Basis) -> np.ndarray:
    """Coordinates of points in the given frame (applies ``B^{-1} = B^T``)."""
    p = np.asarray(points, dtype=float)
    return p @ basis.matrix


def from_basis(coords: np.ndarray, basis: Basis) -> np.ndarray:
    """Inverse of :func:`to_basis`: map frame coordinates back to the world."""
    c = np.asarray(coords, dtype=float)
    return c @ basis.matrix.T


def transform_plane(p: Plane, pose: Pose) -> Plane:
    """Rigidly transform a plane: the center moves, the spans rotate."""
    return Plane(pose.R @ p.center + pose.t, pose.R @ p.span_x, pose.R @ p.span_y)


def compose(parent: Pose, relative: Pose) -> Pose:
    """Chain a relative pose onto a parent pose.

    ``R = relative.R @ parent.R`` and ``t = parent.t + parent.R @ relative.t``;
    see the module docstring for the convention this implies.
    """
    return Pose(relative.R @ parent.R, parent.t + parent.R @ relative.t)


def relative_pose(parent: Pose, child: Pose) -> Pose:
    """The unique relative pose with ``compose(parent, relative) == child``."""
    return Pose(child.R @ parent.R.T, parent.R.T @ (child.t - parent.t))


def rotation_angle_between(Ra: np.ndarray, Rb: np.ndarray) -> float:
    """Geodesic angle between two rotation matrices, in degrees."""
    cos_angle = 0.5 * (float(np.trace(Ra.T @ Rb)) - 1.0)
    return math.degrees(math.acos(min(1.0, max(-1.0, cos_angle))))
