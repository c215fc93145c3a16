"""Occupancy-grid floorplans, exact grid raycasting and equiangular ray scans.

Grid layout: ``cells[row, col]`` with ``row`` growing along world +y and
``col`` along world +x. Cell ``(row, col)`` covers the half-open square
``[ox + col*res, ox + (col+1)*res) x [oy + row*res, oy + (row+1)*res)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import InvalidOriginError, OutOfBoundsError

FREE = 0
OCCUPIED = 1
UNKNOWN = 2

DEFAULT_FOV = math.radians(108.0)
DEFAULT_RESOLUTION = 0.1
DEFAULT_MAX_RANGE = 10.0
TWO_PI = 2.0 * math.pi

# kernel status codes, negative so they never collide with a distance
_OUT_OF_BOUNDS = -1.0
_BLOCKED_ORIGIN = -2.0


def wrap_angle(a):
    """Map angle(s) to ``[-pi, pi)``."""
    if np.ndim(a) == 0:
        w = (float(a) + math.pi) % TWO_PI - math.pi
        return w - TWO_PI if w >= math.pi else w
    w = np.mod(np.asarray(a, dtype=np.float64) + math.pi, TWO_PI) - math.pi
    return np.where(w >= math.pi, w - TWO_PI, w)


@dataclass(frozen=True)
class Pose2:
    x: float
    y: float
    phi: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.phi)):
            raise ValueError("pose must be finite")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "phi", wrap_angle(self.phi))

    def compose(self, dx: float, dy: float, dphi: float) -> "Pose2":
        """Apply a relative motion expressed in this pose's frame."""
        c, s = math.cos(self.phi), math.sin(self.phi)
        return Pose2(self.x + c * dx - s * dy, self.y + s * dx + c * dy, self.phi + dphi)

    def relative_to(self, other: "Pose2") -> tuple[float, float, float]:
        """Motion ``(dx, dy, dphi)`` taking ``other`` to ``self``."""
        c, s = math.cos(other.phi), math.sin(other.phi)
        ex, ey = self.x - other.x, self.y - other.y
        return (c * ex + s * ey, -s * ex + c * ey, wrap_angle(self.phi - other.phi))


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    cells: np.ndarray
    resolution: float = DEFAULT_RESOLUTION
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        cells = np.ascontiguousarray(self.cells, dtype=np.uint8)
        if cells.ndim != 2:
            raise ValueError("cells must be a 2-D array")
        if not np.all(np.isin(cells, (FREE, OCCUPIED, UNKNOWN))):
            raise ValueError("cells must be FREE, OCCUPIED or UNKNOWN")
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "resolution", float(self.resolution))
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    def free_mask(self) -> np.ndarray:
        return self.cells == FREE

    def blocked_mask(self, unknown_blocks: bool = True) -> np.ndarray:
        blocked = self.cells == OCCUPIED
        if unknown_blocks:
            blocked |= self.cells == UNKNOWN
        return blocked

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        return (
            self.origin[0] + (col + 0.5) * self.resolution,
            self.origin[1] + (row + 0.5) * self.resolution,
        )

    def world_to_cell(self, x: float, y: float) -> tuple[int, int]:
        col = math.floor((x - self.origin[0]) / self.resolution)
        row = math.floor((y - self.origin[1]) / self.resolution)
        return row, col

    def in_bounds(self, row: int, col: int) -> bool:
        return 0 <= row < self.height and 0 <= col < self.width

    def with_cells(self, cells: np.ndarray) -> "OccupancyGrid":
        return OccupancyGrid(cells, self.resolution, self.origin)

    def __eq__(self, other):
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return (
            np.array_equal(self.cells, other.cells)
            and self.resolution == other.resolution
            and self.origin == other.origin
        )

    __hash__ = object.__hash__


@numba.njit(cache=True)
def _cast(blocked, ox, oy, res, x, y, angle, max_range):
    h, w = blocked.shape
    dx = math.cos(angle)
    dy = math.sin(angle)
    gx = (x - ox) / res
    gy = (y - oy) / res
    col = math.floor(gx)
    row = math.floor(gy)
    # half-open cells: a start on a boundary belongs to the cell ahead
    if dx < 0.0 and gx == col:
        col -= 1
    if dy < 0.0 and gy == row:
        row -= 1
    if row < 0 or row >= h or col < 0 or col >= w:
        return _OUT_OF_BOUNDS
    if blocked[row, col]:
        return _BLOCKED_ORIGIN

    limit = max_range / res
    if dx > 0.0:
        step_x = 1
        t_max_x = (col + 1 - gx) / dx
        t_dx = 1.0 / dx
    elif dx < 0.0:
        step_x = -1
        t_max_x = (gx - col) / -dx
        t_dx = -1.0 / dx
    else:
        step_x = 0
        t_max_x = math.inf
        t_dx = math.inf
    if dy > 0.0:
        step_y = 1
        t_max_y = (row + 1 - gy) / dy
        t_dy = 1.0 / dy
    elif dy < 0.0:
        step_y = -1
        t_max_y = (gy - row) / -dy
        t_dy = -1.0 / dy
    else:
        step_y = 0
        t_max_y = math.inf
        t_dy = math.inf

    while True:
        if t_max_x < t_max_y:
            t = t_max_x
            col += step_x
            t_max_x += t_dx
        elif t_max_y < t_max_x:
            t = t_max_y
            row += step_y
            t_max_y += t_dy
        else:
            # exact corner crossing: move diagonally
            t = t_max_x
            col += step_x
            row += step_y
            t_max_x += t_dx
            t_max_y += t_dy
        if t >= limit:
            return max_range
        if row < 0 or row >= h or col < 0 or col >= w:
            return max_range
        if blocked[row, col]:
            return t * res


@numba.njit(cache=True)
def _cast_batch(blocked, ox, oy, res, xs, ys, headings, rel_angles, max_range):
    """Distances for every (origin, heading, ray) triple: shape ``(P, O, V)``."""
    n_pos = xs.shape[0]
    n_head = headings.shape[0]
    n_ray = rel_angles.shape[0]
    out = np.empty((n_pos, n_head, n_ray))
    for p in range(n_pos):
        for o in range(n_head):
            for i in range(n_ray):
                out[p, o, i] = _cast(
                    blocked, ox, oy, res, xs[p], ys[p], headings[o] + rel_angles[i], max_range
                )
    return out


def _check_status(r: float, x: float, y: float):
    if r == _OUT_OF_BOUNDS:
        raise OutOfBoundsError(f"ray origin ({x}, {y}) lies outside the grid")
    if r == _BLOCKED_ORIGIN:
        raise InvalidOriginError(f"ray origin ({x}, {y}) lies in a blocked cell")


def raycast(
    grid: OccupancyGrid,
    origin: tuple[float, float],
    angle: float,
    max_range: float = DEFAULT_MAX_RANGE,
    unknown_blocks: bool = True,
) -> float:
    """Distance from ``origin`` to the first blocked cell along ``angle``.

    Returns ``max_range`` when nothing is hit within range or the ray leaves
    the grid.
    """
    if not max_range > 0:
        raise ValueError("max_range must be positive")
    x, y = float(origin[0]), float(origin[1])
    r = _cast(
        grid.blocked_mask(unknown_blocks), grid.origin[0], grid.origin[1],
        grid.resolution, x, y, float(angle), float(max_range),
    )
    _check_status(r, x, y)
    return r


@dataclass(frozen=True, eq=False)
class RayScan:
    fov: float
    angles: np.ndarray
    depths: np.ndarray
    max_range: float = DEFAULT_MAX_RANGE

    def __post_init__(self):
        angles = np.asarray(self.angles, dtype=np.float64).reshape(-1)
        depths = np.asarray(self.depths, dtype=np.float64).reshape(-1)
        if len(angles) < 1 or len(angles) != len(depths):
            raise ValueError("scan needs V >= 1 matching angles and depths")
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "depths", depths)

    @property
    def v(self) -> int:
        return len(self.depths)

    def with_depths(self, depths) -> "RayScan":
        return RayScan(self.fov, self.angles, depths, self.max_range)

    def __eq__(self, other):
        if not isinstance(other, RayScan):
            return NotImplemented
        return (
            self.fov == other.fov
            and np.array_equal(self.angles, other.angles)
            and np.array_equal(self.depths, other.depths)
        )

    __hash__ = object.__hash__


def scan_angles(v: int, fov: float) -> np.ndarray:
    """Equiangular camera-relative ray directions, symmetric about 0.

    A full-circle scan (``fov >= 2*pi``) uses spacing ``2*pi / v`` so the
    first and last rays do not coincide; otherwise rays span
    ``[-fov/2, fov/2]`` inclusive.
    """
    if v < 1:
        raise ValueError("need at least one ray")
    if v == 1:
        return np.zeros(1)
    if fov >= TWO_PI:
        step = TWO_PI / v
    else:
        step = fov / (v - 1)
    return (np.arange(v) - (v - 1) / 2.0) * step


def render_scan(
    grid: OccupancyGrid,
    pose: Pose2,
    v: int,
    fov: float = DEFAULT_FOV,
    max_range: float = DEFAULT_MAX_RANGE,
    unknown_blocks: bool = True,
) -> RayScan:
    if not 0 < fov <= TWO_PI:
        raise ValueError("fov must lie in (0, 2*pi]")
    rel = scan_angles(v, fov)
    depths = _cast_batch(
        grid.blocked_mask(unknown_blocks), grid.origin[0], grid.origin[1], grid.resolution,
        np.array([pose.x]), np.array([pose.y]), np.array([pose.phi]), rel, float(max_range),
    )[0, 0]
    _check_status(depths.min(), pose.x, pose.y)
    return RayScan(fov, rel, depths, max_range)


def render_scans(
    grid: OccupancyGrid,
    xs: np.ndarray,
    ys: np.ndarray,
    headings: np.ndarray,
    v: int,
    fov: float = DEFAULT_FOV,
    max_range: float = DEFAULT_MAX_RANGE,
    unknown_blocks: bool = True,
) -> np.ndarray:
    """Batch render: depths for every position x heading, shape ``(P, O, V)``.

    Positions must be valid ray origins; each entry equals the matching
    :func:`render_scan` depth bit-for-bit.
    """
    rel = scan_angles(v, fov)
    out = _cast_batch(
        grid.blocked_mask(unknown_blocks), grid.origin[0], grid.origin[1], grid.resolution,
        np.ascontiguousarray(xs, dtype=np.float64), np.ascontiguousarray(ys, dtype=np.float64),
        np.ascontiguousarray(headings, dtype=np.float64), rel, float(max_range),
    )
    if out.size and out.min() < 0:
        p = int(np.argwhere(out < 0)[0][0])
        _check_status(out.min(), float(xs[p]), float(ys[p]))
    return out


def free_poses(grid: OccupancyGrid) -> list[tuple[int, int]]:
    """Free cells as ``(row, col)`` in row-major order."""
    rows, cols = np.nonzero(grid.cells == FREE)
    return list(zip(rows.tolist(), cols.tolist()))
