"""Pinhole camera model and rigid-body geometry.

Conventions: camera frame has +z along the optical axis, +x to the right and
+y down the image. Pixel ``(u, v)`` sits at continuous image coordinate
``(u, v)``; the image rectangle spans ``[0, width] x [0, height]``. Depth is
planar (the camera-frame z coordinate), and a depth of 0 marks an invalid
pixel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InvalidDepthError,
    InvalidPoseError,
    InvalidRangeError,
    OutOfBoundsError,
)

ORTHO_TOL = 1e-9


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
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class RigidPose3:
    """Camera-to-world transform ``p_w = R @ p + T``."""

    R: np.ndarray
    T: np.ndarray
    tol: float = field(default=ORTHO_TOL, repr=False, compare=False)

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        T = np.asarray(self.T, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(T))):
            raise InvalidPoseError("pose contains non-finite values")
        if np.max(np.abs(R.T @ R - np.eye(3))) > self.tol:
            raise InvalidPoseError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > self.tol:
            raise InvalidPoseError("rotation determinant is not +1")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "T", T)

    @classmethod
    def identity(cls) -> "RigidPose3":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M, tol: float = ORTHO_TOL) -> "RigidPose3":
        M = np.asarray(M, dtype=np.float64)
        return cls(M[:3, :3], M[:3, 3], tol=tol)

    @property
    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.T
        return M

    def inverse(self) -> "RigidPose3":
        return RigidPose3(self.R.T, -self.R.T @ self.T)

    def __eq__(self, other):
        if not isinstance(other, RigidPose3):
            return NotImplemented
        return np.array_equal(self.R, other.R) and np.array_equal(self.T, other.T)

    __hash__ = None


@dataclass
class PointCloud:
    """World or camera points, optionally tagged with their source pixel."""

    points: np.ndarray
    source: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point coordinates must be finite")
        if self.source is not None:
            self.source = np.asarray(self.source, dtype=np.int64).reshape(-1, 2)
            if len(self.source) != len(self.points):
                raise ValueError("source index length differs from point count")

    def __len__(self):
        return len(self.points)

    @classmethod
    def empty(cls, with_source: bool = False) -> "PointCloud":
        src = np.zeros((0, 2), dtype=np.int64) if with_source else None
        return cls(np.zeros((0, 3)), src)


def as_depth_image(depth) -> np.ndarray:
    """Validate and return a depth image as a float64 ``(H, W)`` array."""
    D = np.asarray(depth, dtype=np.float64)
    if D.ndim != 2:
        raise ValueError("depth image must be 2-D")
    if not np.all(np.isfinite(D)) or np.any(D < 0):
        raise InvalidDepthError("depth values must be finite and non-negative")
    return D


def unproject(u, v, d, K: CameraIntrinsics) -> np.ndarray:
    if not d > 0:
        raise InvalidDepthError(f"depth must be positive, got {d}")
    if not (0 <= u < K.width and 0 <= v < K.height):
        raise OutOfBoundsError(f"pixel ({u}, {v}) outside {K.width}x{K.height} image")
    return np.array([(u - K.cx) * d / K.fx, (v - K.cy) * d / K.fy, float(d)])


def unproject_many(uv: np.ndarray, d: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Vectorized unprojection without bounds checks; returns ``(N, 3)``."""
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    d = np.asarray(d, dtype=np.float64).reshape(-1)
    x = (uv[:, 0] - K.cx) * d / K.fx
    y = (uv[:, 1] - K.cy) * d / K.fy
    return np.stack([x, y, d], axis=1)


def project(p, K: CameraIntrinsics) -> np.ndarray:
    """Inverse of :func:`unproject`: camera point(s) to ``(u, v, depth)``."""
    p = np.asarray(p, dtype=np.float64)
    z = p[..., 2]
    u = K.fx * p[..., 0] / z + K.cx
    v = K.fy * p[..., 1] / z + K.cy
    return np.stack([u, v, z], axis=-1)


def to_world(p, pose: RigidPose3) -> np.ndarray:
    """Apply ``R @ p + T`` to one point or an ``(N, 3)`` array."""
    p = np.asarray(p, dtype=np.float64)
    return p @ pose.R.T + pose.T


def to_camera(p, pose: RigidPose3) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return (p - pose.T) @ pose.R


def depth_to_cloud(D, K: CameraIntrinsics, pose: RigidPose3, stride: int = 1) -> PointCloud:
    """World-frame point per valid pixel on a ``stride`` lattice.

    Points come out in row-major pixel order; ``source`` holds ``(u, v)``.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    D = as_depth_image(D)
    vs, us = np.mgrid[0 : D.shape[0] : stride, 0 : D.shape[1] : stride]
    us, vs = us.ravel(), vs.ravel()
    d = D[vs, us]
    keep = d > 0
    us, vs, d = us[keep], vs[keep], d[keep]
    cam = unproject_many(np.stack([us, vs], axis=1), d, K)
    return PointCloud(to_world(cam, pose), np.stack([us, vs], axis=1))


@dataclass(frozen=True)
class Frustum:
    corners: np.ndarray  # (8, 3): near plane (4), then far plane (4)
    d_min: float
    d_max: float
    K: CameraIntrinsics
    pose: RigidPose3

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        return self.corners.min(axis=0), self.corners.max(axis=0)

    def planes(self) -> tuple[np.ndarray, np.ndarray]:
        """Six inward-facing planes ``n . p + c >= 0`` in world coordinates."""
        K, W, H = self.K, self.K.width, self.K.height
        # camera-frame normals: left, right, top, bottom, near, far
        n_cam = np.array(
            [
                [K.fx, 0.0, K.cx],
                [-K.fx, 0.0, W - K.cx],
                [0.0, K.fy, K.cy],
                [0.0, -K.fy, H - K.cy],
                [0.0, 0.0, 1.0],
                [0.0, 0.0, -1.0],
            ]
        )
        c_cam = np.array([0.0, 0.0, 0.0, 0.0, -self.d_min, self.d_max])
        n_world = n_cam @ self.pose.R.T
        c_world = c_cam - n_world @ self.pose.T
        return n_world, c_world

    def contains(self, p) -> np.ndarray | bool:
        p = np.asarray(p, dtype=np.float64)
        n, c = self.planes()
        inside = np.all(p.reshape(-1, 3) @ n.T + c >= 0, axis=1)
        return bool(inside[0]) if p.ndim == 1 else inside


def frustum_of(K: CameraIntrinsics, pose: RigidPose3, d_min: float, d_max: float) -> Frustum:
    if not (0 < d_min < d_max):
        raise InvalidRangeError(f"need 0 < d_min < d_max, got {d_min}, {d_max}")
    rect = np.array([[0.0, 0.0], [K.width, 0.0], [K.width, K.height], [0.0, K.height]])
    near = unproject_many(rect, np.full(4, float(d_min)), K)
    far = unproject_many(rect, np.full(4, float(d_max)), K)
    corners = to_world(np.vstack([near, far]), pose)
    return Frustum(corners, float(d_min), float(d_max), K, pose)


def yaw_rotation(phi: float) -> np.ndarray:
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def camera_pose_from_planar(x: float, y: float, phi: float, height: float) -> RigidPose3:
    """Level camera at ``height`` looking along world heading ``phi``.

    Optical axis is horizontal; image +y points to world -z.
    """
    c, s = np.cos(phi), np.sin(phi)
    R = np.array([[s, 0.0, c], [-c, 0.0, s], [0.0, -1.0, 0.0]])
    return RigidPose3(R, np.array([x, y, height]))
