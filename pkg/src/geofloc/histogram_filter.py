"""SE(2) localization on an occupancy-grid floorplan.

Pose hypotheses sit at the centres of Free cells, crossed with ``O``
orientation bins centred at ``o * 2*pi / O``. The observation likelihood of
a hypothesis compares the observed ray scan with the scan rendered from the
floorplan at that hypothesis:

    L = exp(-lambda_depth * meanL1) * exp(-lambda_shape * (1 - cos))

It is strictly positive, so no hypothesis is ever hard-killed.
"""

from __future__ import annotations

import math
import threading
import weakref
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numba
import numpy as np

from .errors import BeliefCollapsedError, EmptyHypothesisSpaceError, ScanShapeMismatchError
from .floorplan import (
    DEFAULT_MAX_RANGE,
    FREE,
    TWO_PI,
    OccupancyGrid,
    Pose2,
    RayScan,
    render_scans,
    wrap_angle,
)
from .obsmodel import DEFAULT_EPSILON

DEFAULT_BINS = 36
DEFAULT_LAMBDA_DEPTH = 3.0
DEFAULT_LAMBDA_SHAPE = 1.0

Scorer = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class MotionDelta:
    """Relative motion in the previous pose's frame plus transition noise."""

    dx: float = 0.0
    dy: float = 0.0
    dphi: float = 0.0
    sigma_trans: float = 0.0
    sigma_rot: float = 0.0

    def __post_init__(self):
        vals = (self.dx, self.dy, self.dphi, self.sigma_trans, self.sigma_rot)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("motion delta must be finite")
        if self.sigma_trans < 0 or self.sigma_rot < 0:
            raise ValueError("noise scales must be non-negative")

    @property
    def is_identity(self) -> bool:
        return (
            self.dx == 0 and self.dy == 0 and self.dphi == 0
            and self.sigma_trans == 0 and self.sigma_rot == 0
        )


@dataclass(frozen=True)
class FilterParams:
    n_bins: int = DEFAULT_BINS
    lambda_depth: float = DEFAULT_LAMBDA_DEPTH
    lambda_shape: float = DEFAULT_LAMBDA_SHAPE
    sigma_trans: float = 0.1
    sigma_rot: float = math.radians(5.0)
    max_range: float = DEFAULT_MAX_RANGE
    unknown_blocks: bool = True
    epsilon: float = DEFAULT_EPSILON


def bin_centers(n_bins: int) -> np.ndarray:
    return wrap_angle(np.arange(n_bins) * (TWO_PI / n_bins))


def heading_bin(phi: float, n_bins: int) -> int:
    return int(math.floor(wrap_angle(phi) % TWO_PI / (TWO_PI / n_bins) + 0.5)) % n_bins


@dataclass(eq=False)
class PosteriorGrid:
    probs: np.ndarray  # (H, W, O)
    grid: OccupancyGrid

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 3 or self.probs.shape[:2] != self.grid.shape:
            raise ValueError("posterior must be (H, W, O) matching the grid")

    @property
    def n_bins(self) -> int:
        return self.probs.shape[2]

    def total(self) -> float:
        return float(self.probs.sum())

    def entropy(self) -> float:
        p = self.probs[self.probs > 0]
        return float(-(p * np.log(p)).sum())

    def copy(self) -> "PosteriorGrid":
        return PosteriorGrid(self.probs.copy(), self.grid)


def likelihood_batch(
    obs: np.ndarray,
    map_depths: np.ndarray,
    lambda_depth: float = DEFAULT_LAMBDA_DEPTH,
    lambda_shape: float = DEFAULT_LAMBDA_SHAPE,
    epsilon: float = DEFAULT_EPSILON,
) -> np.ndarray:
    """Likelihood of ``obs`` (V,) against every rendered scan in ``map_depths`` (..., V)."""
    obs = np.ascontiguousarray(obs, dtype=np.float64)
    map_depths = np.asarray(map_depths, dtype=np.float64)
    flat = np.ascontiguousarray(map_depths.reshape(-1, map_depths.shape[-1]))
    if flat.shape[1] != len(obs):
        raise ScanShapeMismatchError("observation and map scans differ in ray count")
    out = _likelihood_kernel(obs, flat, float(lambda_depth), float(lambda_shape), float(epsilon))
    return out.reshape(map_depths.shape[:-1])


@numba.njit(cache=True)
def _likelihood_kernel(obs, maps, lambda_depth, lambda_shape, epsilon):
    n, v = maps.shape
    obs_sq = 0.0
    for i in range(v):
        obs_sq += obs[i] * obs[i]
    obs_norm = math.sqrt(obs_sq)
    out = np.empty(n)
    for k in range(n):
        l1 = 0.0
        dot = 0.0
        sq = 0.0
        for i in range(v):
            m = maps[k, i]
            l1 += abs(m - obs[i])
            dot += m * obs[i]
            sq += m * m
        denom = max(math.sqrt(sq) * obs_norm, epsilon)
        out[k] = math.exp(-lambda_depth * (l1 / v)) * math.exp(-lambda_shape * (1.0 - dot / denom))
    return out


def likelihood(
    obs: RayScan,
    map_scan: RayScan,
    lambda_depth: float = DEFAULT_LAMBDA_DEPTH,
    lambda_shape: float = DEFAULT_LAMBDA_SHAPE,
    epsilon: float = DEFAULT_EPSILON,
) -> float:
    if obs.v != map_scan.v or obs.fov != map_scan.fov:
        raise ScanShapeMismatchError("observation and map scan differ in V or fov")
    return float(
        likelihood_batch(obs.depths, map_scan.depths[None, :], lambda_depth, lambda_shape, epsilon)[0]
    )


class MapScans:
    """Rendered floorplan scans for every Free cell x orientation bin."""

    def __init__(self, grid: OccupancyGrid, v: int, fov: float, n_bins: int,
                 max_range: float = DEFAULT_MAX_RANGE, unknown_blocks: bool = True):
        free = grid.cells == FREE
        if not free.any():
            raise EmptyHypothesisSpaceError("floorplan has no Free cells")
        self.rows, self.cols = np.nonzero(free)
        self.index = np.full(grid.shape, -1, dtype=np.int64)
        self.index[self.rows, self.cols] = np.arange(len(self.rows))
        xs = grid.origin[0] + (self.cols + 0.5) * grid.resolution
        ys = grid.origin[1] + (self.rows + 0.5) * grid.resolution
        self.depths = render_scans(
            grid, xs, ys, bin_centers(n_bins), v, fov, max_range, unknown_blocks
        )


_cache: "weakref.WeakKeyDictionary[OccupancyGrid, dict]" = weakref.WeakKeyDictionary()
_cache_lock = threading.Lock()


def map_scans(grid: OccupancyGrid, v: int, fov: float, n_bins: int,
              max_range: float = DEFAULT_MAX_RANGE, unknown_blocks: bool = True) -> MapScans:
    """Memoized :class:`MapScans` keyed on the grid object and render settings."""
    key = (v, float(fov), n_bins, float(max_range), unknown_blocks)
    with _cache_lock:
        entry = _cache.setdefault(grid, {})
        hit = entry.get(key)
    if hit is not None:
        return hit
    scans = MapScans(grid, v, fov, n_bins, max_range, unknown_blocks)
    with _cache_lock:
        return _cache[grid].setdefault(key, scans)


def clear_scan_cache():
    with _cache_lock:
        _cache.clear()


def score_volume(
    grid: OccupancyGrid,
    obs: RayScan,
    params: FilterParams = FilterParams(),
    scorer: Scorer | None = None,
) -> np.ndarray:
    """Unnormalized likelihood for every (row, col, bin); zero off Free cells."""
    ms = map_scans(grid, obs.v, obs.fov, params.n_bins, params.max_range, params.unknown_blocks)
    if scorer is None:
        lik = likelihood_batch(
            obs.depths, ms.depths, params.lambda_depth, params.lambda_shape, params.epsilon
        )
    else:
        lik = np.asarray(scorer(obs.depths, ms.depths), dtype=np.float64)
    vol = np.zeros(grid.shape + (params.n_bins,))
    vol[ms.rows, ms.cols] = lik
    return vol


def _pose_of(grid: OccupancyGrid, flat_index: int, n_bins: int) -> Pose2:
    row, col, o = np.unravel_index(flat_index, grid.shape + (n_bins,))
    x, y = grid.cell_center(int(row), int(col))
    return Pose2(x, y, bin_centers(n_bins)[o])


def single_frame_localize(
    grid: OccupancyGrid,
    obs: RayScan,
    n_bins: int = DEFAULT_BINS,
    params: FilterParams | None = None,
    scorer: Scorer | None = None,
) -> tuple[Pose2, np.ndarray]:
    """Exhaustive scoring of all hypotheses; returns the best pose and the normalized volume."""
    params = FilterParams(n_bins=n_bins) if params is None else params
    vol = score_volume(grid, obs, params, scorer)
    vol /= vol.sum()
    return _pose_of(grid, int(np.argmax(vol)), params.n_bins), vol


def init_uniform(grid: OccupancyGrid, n_bins: int = DEFAULT_BINS) -> PosteriorGrid:
    free = grid.cells == FREE
    n = int(free.sum())
    if n == 0:
        raise EmptyHypothesisSpaceError("floorplan has no Free cells")
    probs = np.zeros(grid.shape + (n_bins,))
    probs[free] = 1.0 / (n * n_bins)
    return PosteriorGrid(probs, grid)


def translation_kernel(sx: float, sy: float, sigma: float) -> list[tuple[int, int, float]]:
    """Integer cell offsets ``(d_col, d_row, weight)`` for a shift of ``(sx, sy)`` cells.

    Gaussian with std ``sigma`` cells centred on the shift, truncated at
    3 sigma and normalized; ``sigma = 0`` is an exact shift to the nearest cell.
    """
    if sigma == 0:
        return [(math.floor(sx + 0.5), math.floor(sy + 0.5), 1.0)]
    r = 3.0 * sigma
    offs = []
    for j in range(math.floor(sy - r), math.ceil(sy + r) + 1):
        for i in range(math.floor(sx - r), math.ceil(sx + r) + 1):
            d2 = (i - sx) ** 2 + (j - sy) ** 2
            if d2 <= r * r:
                offs.append((i, j, math.exp(-0.5 * d2 / (sigma * sigma))))
    if not offs:
        return [(math.floor(sx + 0.5), math.floor(sy + 0.5), 1.0)]
    total = sum(w for _, _, w in offs)
    return [(i, j, w / total) for i, j, w in offs]


def rotation_kernel(shift: float, sigma: float) -> list[tuple[int, float]]:
    """Integer bin offsets ``(d_bin, weight)``; 1-D analogue of :func:`translation_kernel`."""
    if sigma == 0:
        return [(math.floor(shift + 0.5), 1.0)]
    r = 3.0 * sigma
    offs = [
        (k, math.exp(-0.5 * (k - shift) ** 2 / (sigma * sigma)))
        for k in range(math.floor(shift - r), math.ceil(shift + r) + 1)
        if abs(k - shift) <= r
    ]
    if not offs:
        return [(math.floor(shift + 0.5), 1.0)]
    total = sum(w for _, w in offs)
    return [(k, w / total) for k, w in offs]


@numba.njit(cache=True)
def _translate(src, d_rows, d_cols, weights, counts):
    """Per-bin shifted accumulation; mass shifted off the grid is dropped."""
    h, w, n_bins = src.shape
    out = np.zeros_like(src)
    for o in range(n_bins):
        for k in range(counts[o]):
            dr = d_rows[o, k]
            dc = d_cols[o, k]
            wt = weights[o, k]
            for r in range(max(0, dr), min(h, h + dr)):
                for c in range(max(0, dc), min(w, w + dc)):
                    out[r, c, o] += wt * src[r - dr, c - dc, o]
    return out


def _normalize(probs: np.ndarray, grid: OccupancyGrid) -> np.ndarray:
    probs[grid.cells != FREE] = 0.0
    total = probs.sum()
    if not total > 0 or not math.isfinite(total):
        raise BeliefCollapsedError("posterior mass vanished")
    probs /= total
    return probs


def predict(post: PosteriorGrid, delta: MotionDelta) -> PosteriorGrid:
    """Motion update: shift each bin's mass by the motion in that bin's frame, then blur."""
    if delta.is_identity:
        return post.copy()
    grid = post.grid
    n_bins = post.n_bins
    res = grid.resolution
    kernels = []
    for theta in np.arange(n_bins) * (TWO_PI / n_bins):
        c, s = math.cos(theta), math.sin(theta)
        sx = (c * delta.dx - s * delta.dy) / res
        sy = (s * delta.dx + c * delta.dy) / res
        kernels.append(translation_kernel(sx, sy, delta.sigma_trans / res))
    width = max(len(k) for k in kernels)
    d_rows = np.zeros((n_bins, width), dtype=np.int64)
    d_cols = np.zeros((n_bins, width), dtype=np.int64)
    weights = np.zeros((n_bins, width))
    counts = np.array([len(k) for k in kernels], dtype=np.int64)
    for o, kern in enumerate(kernels):
        for k, (d_col, d_row, w) in enumerate(kern):
            d_rows[o, k], d_cols[o, k], weights[o, k] = d_row, d_col, w
    moved = _translate(np.ascontiguousarray(post.probs), d_rows, d_cols, weights, counts)
    bin_width = TWO_PI / n_bins
    out = np.zeros_like(moved)
    for k, w in rotation_kernel(delta.dphi / bin_width, delta.sigma_rot / bin_width):
        out += w * np.roll(moved, k, axis=2)
    return PosteriorGrid(_normalize(out, grid), grid)


def update(
    post: PosteriorGrid,
    obs: RayScan,
    params: FilterParams = FilterParams(),
    scorer: Scorer | None = None,
) -> PosteriorGrid:
    """Measurement update: multiply by the observation likelihood and renormalize."""
    params = params if params.n_bins == post.n_bins else replace(params, n_bins=post.n_bins)
    lik = score_volume(post.grid, obs, params, scorer)
    return PosteriorGrid(_normalize(post.probs * lik, post.grid), post.grid)


def argmax_pose(post: PosteriorGrid) -> Pose2:
    """Centre of the most probable (cell, bin); ties go to the lowest linear index."""
    return _pose_of(post.grid, int(np.argmax(post.probs)), post.n_bins)


def posterior_modes(post: PosteriorGrid, rtol: float = 1e-6) -> list[tuple[int, int, int]]:
    """All (row, col, bin) whose mass is within ``rtol`` of the maximum."""
    peak = post.probs.max()
    idx = np.argwhere(post.probs >= peak * (1.0 - rtol))
    return [tuple(int(i) for i in r) for r in idx]


@dataclass
class TrackStep:
    step: int
    estimate: Pose2
    entropy: float
    peak: float


@dataclass
class TrackResult:
    steps: list[TrackStep]
    posterior: PosteriorGrid
    posteriors: list[PosteriorGrid] = field(default_factory=list)

    @property
    def estimates(self) -> list[Pose2]:
        return [s.estimate for s in self.steps]


def track(
    grid: OccupancyGrid,
    observations: Sequence[RayScan],
    deltas: Sequence[MotionDelta | tuple[float, float, float]],
    params: FilterParams = FilterParams(),
    scorer: Scorer | None = None,
    keep_posteriors: bool = False,
) -> TrackResult:
    """Run the filter over a sequence.

    ``deltas[t]`` is the motion from step ``t-1`` to step ``t``; ``deltas[0]``
    is ignored. Plain ``(dx, dy, dphi)`` tuples pick up the noise scales in
    ``params``.
    """
    if len(observations) == 0:
        raise ValueError("empty observation sequence")
    if len(deltas) != len(observations):
        raise ValueError("need one motion delta per observation")
    post = init_uniform(grid, params.n_bins)
    steps, kept = [], []
    for t, obs in enumerate(observations):
        if t > 0:
            d = deltas[t]
            if not isinstance(d, MotionDelta):
                d = MotionDelta(*d, sigma_trans=params.sigma_trans, sigma_rot=params.sigma_rot)
            post = predict(post, d)
        post = update(post, obs, params, scorer)
        steps.append(TrackStep(t, argmax_pose(post), post.entropy(), float(post.probs.max())))
        if keep_posteriors:
            kept.append(post)
    return TrackResult(steps, post, kept)
