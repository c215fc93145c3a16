"""Synthetic scenarios: rectilinear floorplans, clutter, trajectories, RGB-D frames.

Everything here is a pure function of a :class:`ScenarioSpec` (and its
seed). Clutter lives only in a *twin* of the floorplan: observations are
rendered from the twin while localization uses the clean plan.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numba
import numpy as np
from scipy import ndimage

from .errors import InfeasibleSpecError, PlacementFailedError, TrajectoryStuckError
from .floorplan import (
    FREE,
    OCCUPIED,
    OccupancyGrid,
    Pose2,
    RayScan,
    _cast,
)
from .geom import CameraIntrinsics, PointCloud, RigidPose3, camera_pose_from_planar
from .obsmodel import observe_oracle

FORWARD = "forward"
GENERAL = "general"
CEILING_HEIGHT = 2.5

_MAX_LAYOUT_TRIES = 200
_MAX_PLACEMENT_TRIES = 200
_MAX_HEADING_TRIES = 64


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int = 0
    width: int = 64
    height: int = 64
    resolution: float = 0.1
    rooms: int = 4
    room_min: float = 1.5
    room_max: float = 4.5
    door_width: float = 0.8
    clutter_count: int = 0
    clutter_min: float = 0.2
    clutter_max: float = 0.6
    profile: str = GENERAL
    steps: int = 40
    step_length: float = 0.3
    heading_jitter: float = 0.1
    turn_prob: float = 0.3
    turn_sigma: float = math.pi / 3
    clearance: float = 0.3
    n_rays: int = 40
    fov: float = math.radians(108.0)
    sigma: float = 0.0
    dropout: float = 0.0
    max_range: float = 10.0
    image_width: int = 32
    image_height: int = 24
    camera_hfov: float = math.radians(90.0)
    camera_height: float = 1.2

    def __post_init__(self):
        if self.width < 3 or self.height < 3:
            raise ValueError("grid must be at least 3x3 cells")
        positive = (
            self.resolution, self.room_min, self.room_max, self.door_width,
            self.clutter_min, self.clutter_max, self.step_length, self.max_range,
        )
        if any(not v > 0 for v in positive):
            raise ValueError("all sizes and ranges must be positive")
        if self.room_min > self.room_max or self.clutter_min > self.clutter_max:
            raise ValueError("size ranges must satisfy min <= max")
        if self.rooms < 1 or self.steps < 1 or self.clutter_count < 0:
            raise ValueError("need rooms >= 1, steps >= 1, clutter_count >= 0")
        if self.profile not in (FORWARD, GENERAL):
            raise ValueError(f"unknown trajectory profile {self.profile!r}")

    def cells(self, metres: float) -> int:
        return max(1, int(round(metres / self.resolution)))


def _rng(spec: ScenarioSpec, stream: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed, stream])


def free_components(cells: np.ndarray) -> int:
    """Number of 4-connected components of Free space."""
    _, n = ndimage.label(cells == FREE)
    return n


def _symmetries(cells: np.ndarray):
    yield np.flipud(cells)
    yield np.fliplr(cells)
    yield np.rot90(cells, 2)
    if cells.shape[0] == cells.shape[1]:
        yield np.rot90(cells, 1)
        yield np.rot90(cells, 3)
        yield cells.T
        yield np.rot90(cells, 2).T


def is_self_symmetric(cells: np.ndarray) -> bool:
    return any(np.array_equal(cells, s) for s in _symmetries(cells))


def _split(region, spec: ScenarioSpec, rng, cells: np.ndarray):
    """Split an interior region with a 1-cell wall holding one door; None if impossible."""
    r0, r1, c0, c1 = region
    lo, hi = spec.cells(spec.room_min), spec.cells(spec.room_max)
    door = spec.cells(spec.door_width)
    h, w = r1 - r0 + 1, c1 - c0 + 1
    axes = []
    if w >= 2 * lo + 1 and h >= door:
        axes.append("col")
    if h >= 2 * lo + 1 and w >= door:
        axes.append("row")
    if not axes:
        return None
    if len(axes) == 2:
        axis = "col" if w > h else "row" if h > w else axes[rng.integers(2)]
    else:
        axis = axes[0]
    span = w if axis == "col" else h
    first = r0 if axis == "row" else c0
    # size of the first piece, preferring pieces no larger than room_max
    smin, smax = lo, span - lo - 1
    pref_hi = min(smax, hi)
    size = int(rng.integers(smin, pref_hi + 1)) if pref_hi >= smin else int(rng.integers(smin, smax + 1))
    k = first + size
    if axis == "col":
        cells[r0 : r1 + 1, k] = OCCUPIED
        d0 = int(rng.integers(r0, r1 - door + 2))
        cells[d0 : d0 + door, k] = FREE
        return (r0, r1, c0, k - 1), (r0, r1, k + 1, c1)
    cells[k, c0 : c1 + 1] = OCCUPIED
    d0 = int(rng.integers(c0, c1 - door + 2))
    cells[k, d0 : d0 + door] = FREE
    return (r0, k - 1, c0, c1), (k + 1, r1, c0, c1)


def gen_floorplan(spec: ScenarioSpec) -> OccupancyGrid:
    """Rectilinear multi-room floorplan with 1-cell walls and door gaps.

    Rooms come from recursive axis-aligned splits of the interior; every
    split wall gets one door of ``door_width``. Layouts whose Free space is
    disconnected, or (for more than one room) that map onto themselves
    under a rotation or reflection, are regenerated.
    """
    rng = _rng(spec, 0)
    for _ in range(_MAX_LAYOUT_TRIES):
        cells = np.zeros((spec.height, spec.width), dtype=np.uint8)
        cells[0, :] = cells[-1, :] = OCCUPIED
        cells[:, 0] = cells[:, -1] = OCCUPIED
        regions = [(1, spec.height - 2, 1, spec.width - 2)]
        while len(regions) < spec.rooms:
            order = sorted(
                range(len(regions)),
                key=lambda i: -(regions[i][1] - regions[i][0] + 1) * (regions[i][3] - regions[i][2] + 1),
            )
            for i in order:
                parts = _split(regions[i], spec, rng, cells)
                if parts is not None:
                    regions[i : i + 1] = list(parts)
                    break
            else:
                raise InfeasibleSpecError(
                    f"cannot fit {spec.rooms} rooms of at least {spec.room_min} m"
                )
        if free_components(cells) != 1:
            continue
        if spec.rooms > 1 and is_self_symmetric(cells):
            continue
        return OccupancyGrid(cells, spec.resolution)
    raise InfeasibleSpecError("no connected, asymmetric layout found")


def add_clutter(grid: OccupancyGrid, spec: ScenarioSpec) -> OccupancyGrid:
    """Cluttered twin: ``clutter_count`` Occupied rectangles dropped into Free space.

    A placement must cover only Free cells and keep Free space connected;
    failing placements are resampled.
    """
    if spec.clutter_count == 0:
        return grid.with_cells(grid.cells.copy())
    rng = _rng(spec, 1)
    cells = grid.cells.copy()
    lo, hi = spec.cells(spec.clutter_min), spec.cells(spec.clutter_max)
    for _ in range(spec.clutter_count):
        for _ in range(_MAX_PLACEMENT_TRIES):
            h, w = (int(x) for x in rng.integers(lo, hi + 1, size=2))
            if h > cells.shape[0] or w > cells.shape[1]:
                continue
            r = int(rng.integers(0, cells.shape[0] - h + 1))
            c = int(rng.integers(0, cells.shape[1] - w + 1))
            block = cells[r : r + h, c : c + w]
            if np.any(block != FREE):
                continue
            trial = cells.copy()
            trial[r : r + h, c : c + w] = OCCUPIED
            if free_components(trial) == 1:
                cells = trial
                break
        else:
            raise PlacementFailedError("could not place clutter without sealing free space")
    return grid.with_cells(cells)


@dataclass
class Trajectory:
    poses: list[Pose2]
    deltas: list[tuple[float, float, float]]
    observations: list[RayScan]

    def __len__(self):
        return len(self.poses)

    def composed_poses(self) -> list[Pose2]:
        out = [self.poses[0]]
        for d in self.deltas[1:]:
            out.append(out[-1].compose(*d))
        return out


def clearance_map(grid: OccupancyGrid) -> np.ndarray:
    """Distance (metres) from each cell centre to the nearest non-Free cell."""
    return ndimage.distance_transform_edt(grid.cells == FREE) * grid.resolution


def _segment_clear(grid: OccupancyGrid, clear: np.ndarray, a: Pose2, b: Pose2, margin: float) -> bool:
    n = max(2, int(math.ceil(math.hypot(b.x - a.x, b.y - a.y) / (grid.resolution / 4))) + 1)
    for t in np.linspace(0.0, 1.0, n):
        row, col = grid.world_to_cell(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y))
        if not grid.in_bounds(row, col) or clear[row, col] < margin:
            return False
    return True


def gen_trajectory(
    grid: OccupancyGrid,
    cluttered: OccupancyGrid,
    spec: ScenarioSpec,
    observe: bool = True,
) -> Trajectory:
    """Ground-truth trajectory with exact relative motions and oracle observations.

    Poses keep ``spec.clearance`` metres from anything Occupied in the
    cluttered twin. ``forward`` steps always translate; the ``general``
    profile mixes in in-place turns with probability ``turn_prob``.
    """
    rng = _rng(spec, 2)
    clear = clearance_map(cluttered)
    ok = np.argwhere((clear >= spec.clearance) & (grid.cells == FREE))
    if len(ok) == 0:
        raise TrajectoryStuckError("no start cell with the required clearance")
    row, col = ok[rng.integers(len(ok))]
    x0, y0 = grid.cell_center(int(row), int(col))
    half = grid.resolution / 2
    pose = Pose2(
        x0 + rng.uniform(-half, half),
        y0 + rng.uniform(-half, half),
        rng.uniform(-math.pi, math.pi),
    )
    poses = [pose]
    deltas = [(0.0, 0.0, 0.0)]
    for _ in range(1, spec.steps):
        if spec.profile == GENERAL and rng.random() < spec.turn_prob:
            nxt = Pose2(pose.x, pose.y, pose.phi + rng.normal(0.0, spec.turn_sigma))
        else:
            for attempt in range(_MAX_HEADING_TRIES):
                if attempt == 0:
                    heading = pose.phi + rng.normal(0.0, spec.heading_jitter)
                else:
                    heading = rng.uniform(-math.pi, math.pi)
                cand = Pose2(
                    pose.x + spec.step_length * math.cos(heading),
                    pose.y + spec.step_length * math.sin(heading),
                    heading,
                )
                if _segment_clear(cluttered, clear, pose, cand, spec.clearance):
                    nxt = cand
                    break
            else:
                raise TrajectoryStuckError("no collision-free forward move")
        deltas.append(nxt.relative_to(pose))
        poses.append(nxt)
        pose = nxt
    obs = []
    if observe:
        obs_rng = _rng(spec, 3)
        obs = [
            observe_oracle(
                grid, cluttered, p, spec.n_rays, spec.fov, spec.sigma, spec.dropout,
                obs_rng, spec.max_range,
            )
            for p in poses
        ]
    return Trajectory(poses, deltas, obs)


@dataclass
class Scenario:
    spec: ScenarioSpec
    grid: OccupancyGrid
    cluttered: OccupancyGrid
    trajectory: Trajectory


def gen_scenario(spec: ScenarioSpec, observe: bool = True) -> Scenario:
    grid = gen_floorplan(spec)
    cluttered = add_clutter(grid, spec)
    return Scenario(spec, grid, cluttered, gen_trajectory(grid, cluttered, spec, observe))


def camera_intrinsics(spec: ScenarioSpec) -> CameraIntrinsics:
    f = (spec.image_width / 2.0) / math.tan(spec.camera_hfov / 2.0)
    return CameraIntrinsics(f, f, spec.image_width / 2.0, spec.image_height / 2.0,
                            spec.image_width, spec.image_height)


@numba.njit(cache=True)
def _render_depth(blocked, ox, oy, res, R, C, fx, fy, cx, cy, width, height, ceiling, max_range):
    out = np.zeros((height, width))
    for v in range(height):
        for u in range(width):
            a = (u - cx) / fx
            b = (v - cy) / fy
            dx = R[0, 0] * a + R[0, 1] * b + R[0, 2]
            dy = R[1, 0] * a + R[1, 1] * b + R[1, 2]
            dz = R[2, 0] * a + R[2, 1] * b + R[2, 2]
            t = math.inf
            if dz < 0.0:
                t = -C[2] / dz
            elif dz > 0.0:
                t = (ceiling - C[2]) / dz
            horiz = math.sqrt(dx * dx + dy * dy)
            if horiz > 0.0:
                r = _cast(blocked, ox, oy, res, C[0], C[1], math.atan2(dy, dx), max_range)
                if 0.0 <= r < max_range:
                    t = min(t, r / horiz)
            if t < math.inf:
                out[v, u] = t
    return out


def render_depth(
    grid: OccupancyGrid,
    K: CameraIntrinsics,
    pose: RigidPose3,
    ceiling: float = CEILING_HEIGHT,
    max_range: float = 100.0,
) -> np.ndarray:
    """Planar depth image of the extruded floorplan (walls, floor, ceiling)."""
    return _render_depth(
        grid.blocked_mask(), grid.origin[0], grid.origin[1], grid.resolution,
        pose.R, pose.T, K.fx, K.fy, K.cx, K.cy, K.width, K.height, ceiling, max_range,
    )


def surface_cloud(grid: OccupancyGrid, spacing: float = 0.02, ceiling: float = CEILING_HEIGHT) -> PointCloud:
    """Uniform samples of every wall face bordering Free space, plus floor and ceiling."""
    res = grid.resolution
    n_side = max(1, int(round(res / spacing)))
    side = (np.arange(n_side) + 0.5) * (res / n_side)
    n_up = max(1, int(round(ceiling / spacing)))
    up = (np.arange(n_up) + 0.5) * (ceiling / n_up)
    ox, oy = grid.origin
    free = grid.cells == FREE
    blocked = ~free
    parts = []
    H, W = grid.shape
    # faces: blocked cell with a free neighbour; face lies on the shared edge
    for dr, dc in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        nb = np.zeros_like(free)
        src = free[max(0, dr) : H + min(0, dr), max(0, dc) : W + min(0, dc)]
        nb[max(0, -dr) : H + min(0, -dr), max(0, -dc) : W + min(0, -dc)] = src
        rows, cols = np.nonzero(blocked & nb)
        for r, c in zip(rows, cols):
            if dc != 0:
                x = ox + (c + (1 if dc > 0 else 0)) * res
                ys = oy + r * res + side
                pts = np.array([(x, y, z) for y in ys for z in up])
            else:
                y = oy + (r + (1 if dr > 0 else 0)) * res
                xs = ox + c * res + side
                pts = np.array([(x, y, z) for x in xs for z in up])
            parts.append(pts)
    rows, cols = np.nonzero(free)
    gx, gy = np.meshgrid(side, side, indexing="xy")
    offs = np.stack([gx.ravel(), gy.ravel()], axis=1)
    for z in (0.0, ceiling):
        base = np.stack([ox + cols * res, oy + rows * res], axis=1)
        xy = (base[:, None, :] + offs[None, :, :]).reshape(-1, 2)
        parts.append(np.hstack([xy, np.full((len(xy), 1), z)]))
    return PointCloud(np.vstack(parts) if parts else np.zeros((0, 3)))


@dataclass
class RGBDSequence:
    frames: list[tuple[np.ndarray, RigidPose3]]
    intrinsics: CameraIntrinsics
    surface: PointCloud
    grid: OccupancyGrid
    trajectory: Trajectory


def frames_for_poses(
    grid: OccupancyGrid, spec: ScenarioSpec, poses: list[Pose2]
) -> list[tuple[np.ndarray, RigidPose3]]:
    K = camera_intrinsics(spec)
    out = []
    for p in poses:
        cam = camera_pose_from_planar(p.x, p.y, p.phi, spec.camera_height)
        out.append((render_depth(grid, K, cam), cam))
    return out


def gen_rgbd_sequence(spec: ScenarioSpec, surface_spacing: float = 0.02) -> RGBDSequence:
    """Perfect depth frames along a simulated trajectory plus a surface point cloud."""
    grid = gen_floorplan(spec)
    traj = gen_trajectory(grid, grid, replace(spec, clutter_count=0), observe=False)
    return RGBDSequence(
        frames_for_poses(grid, spec, traj.poses),
        camera_intrinsics(spec),
        surface_cloud(grid, surface_spacing),
        grid,
        traj,
    )
