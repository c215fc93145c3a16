"""Observation model contract: depth-hypothesis distributions and ray scans.

A :class:`DepthDistribution` holds, for each of ``V`` equiangular rays, a
probability vector over ``K`` planar-depth hypotheses. Single-frame and
multi-frame predictions are aligned by linear interpolation along the ray
axis, fused with a soft weight, and reduced to a ray scan by taking the
expectation. Learned predictors are out of scope; :func:`observe_oracle`
and :func:`scan_to_distribution` stand in for them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DownsampleNotSupportedError,
    InvalidOriginError,
    InvalidWeightError,
    ScanShapeMismatchError,
)
from .floorplan import (
    DEFAULT_FOV,
    DEFAULT_MAX_RANGE,
    FREE,
    OccupancyGrid,
    Pose2,
    RayScan,
    render_scan,
    scan_angles,
)

DEFAULT_EPSILON = 1e-8
DEFAULT_N_HYPOTHESES = 64
DEFAULT_DEPTH_RANGE = (0.1, 10.0)


def default_depth_grid(
    k: int = DEFAULT_N_HYPOTHESES, lo: float = DEFAULT_DEPTH_RANGE[0], hi: float = DEFAULT_DEPTH_RANGE[1]
) -> np.ndarray:
    return np.linspace(lo, hi, k)


@dataclass(frozen=True, eq=False)
class DepthDistribution:
    depth_grid: np.ndarray  # (K,)
    probs: np.ndarray  # (V, K)
    fov: float = DEFAULT_FOV

    def __post_init__(self):
        grid = np.asarray(self.depth_grid, dtype=np.float64).reshape(-1)
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 2 or probs.shape[1] != len(grid):
            raise ValueError("probs must be (V, K) with K matching the depth grid")
        if not np.all(np.isfinite(grid)) or np.any(np.diff(grid) <= 0):
            raise ValueError("depth grid must be finite and strictly increasing")
        if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("rows must be probability vectors")
        object.__setattr__(self, "depth_grid", grid)
        object.__setattr__(self, "probs", probs)

    @property
    def v(self) -> int:
        return self.probs.shape[0]

    @property
    def k(self) -> int:
        return self.probs.shape[1]


def upsample_rays(P: DepthDistribution, v_target: int) -> DepthDistribution:
    """Resample rows onto ``v_target`` equiangular rays over the same FoV.

    Rows are linearly interpolated between the two nearest source rays, then
    renormalized.
    """
    if v_target < P.v:
        raise DownsampleNotSupportedError(f"cannot go from {P.v} to {v_target} rays")
    if v_target == P.v:
        return DepthDistribution(P.depth_grid, P.probs.copy(), P.fov)
    if P.v == 1:
        out = np.repeat(P.probs, v_target, axis=0)
    else:
        pos = np.arange(v_target) * (P.v - 1) / (v_target - 1)
        lo = np.minimum(np.floor(pos).astype(np.int64), P.v - 2)
        t = (pos - lo)[:, None]
        out = (1.0 - t) * P.probs[lo] + t * P.probs[lo + 1]
    out = out / out.sum(axis=1, keepdims=True)
    return DepthDistribution(P.depth_grid, out, P.fov)


def fuse(P_single: DepthDistribution, P_mv: DepthDistribution, omega: float) -> DepthDistribution:
    """``omega * Upsample(P_single) + (1 - omega) * P_mv``."""
    if not 0.0 <= omega <= 1.0:
        raise InvalidWeightError(f"omega must lie in [0, 1], got {omega}")
    if not np.array_equal(P_single.depth_grid, P_mv.depth_grid):
        raise ValueError("single and multi-view distributions need the same depth grid")
    up = upsample_rays(P_single, P_mv.v)
    if omega == 1.0:
        return up
    if omega == 0.0:
        return DepthDistribution(P_mv.depth_grid, P_mv.probs.copy(), P_mv.fov)
    return DepthDistribution(P_mv.depth_grid, omega * up.probs + (1.0 - omega) * P_mv.probs, P_mv.fov)


def expected_scan(P: DepthDistribution, fov: float | None = None, max_range: float = DEFAULT_MAX_RANGE) -> RayScan:
    """Per-ray expected depth under ``P``."""
    fov = P.fov if fov is None else fov
    depths = P.probs @ P.depth_grid
    depths = np.clip(depths, P.depth_grid[0], P.depth_grid[-1])
    return RayScan(fov, scan_angles(P.v, fov), depths, max_range)


def scan_to_distribution(
    scan: RayScan, depth_grid: np.ndarray | None = None, sigma: float = 0.1
) -> DepthDistribution:
    """Gaussian-shaped hypothesis distribution centred on each ray's depth.

    ``sigma = 0`` gives a one-hot row at the nearest hypothesis.
    """
    grid = default_depth_grid() if depth_grid is None else np.asarray(depth_grid, dtype=np.float64)
    d = scan.depths[:, None]
    if sigma == 0:
        probs = np.zeros((scan.v, len(grid)))
        probs[np.arange(scan.v), np.argmin(np.abs(d - grid[None, :]), axis=1)] = 1.0
    else:
        logits = -0.5 * ((d - grid[None, :]) / sigma) ** 2
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
    return DepthDistribution(grid, probs, scan.fov)


def _check_pair(d: RayScan, d_star: RayScan):
    if d.v != d_star.v or d.fov != d_star.fov:
        raise ScanShapeMismatchError(
            f"scans differ: V={d.v}/{d_star.v}, fov={d.fov}/{d_star.fov}"
        )


def cosine(a: np.ndarray, b: np.ndarray, epsilon: float = DEFAULT_EPSILON) -> float:
    return float(a @ b / max(np.linalg.norm(a) * np.linalg.norm(b), epsilon))


def floc_terms(d: RayScan, d_star: RayScan, epsilon: float = DEFAULT_EPSILON) -> tuple[float, float]:
    """``(mean L1 error, cosine similarity)`` between predicted and reference rays."""
    _check_pair(d, d_star)
    l1 = float(np.mean(np.abs(d.depths - d_star.depths)))
    return l1, cosine(d.depths, d_star.depths, epsilon)


def floc_loss(
    d: RayScan, d_star: RayScan, epsilon: float = DEFAULT_EPSILON, literal: bool = False
) -> float:
    """Ray-depth training loss: mean L1 plus a cosine shape term.

    The shape term is ``1 - cos(d, d*)`` so it vanishes for identical shapes.
    ``literal=True`` adds the raw cosine instead, which rewards dissimilar
    shapes when minimized; kept only for comparison.
    """
    l1, cos = floc_terms(d, d_star, epsilon)
    return l1 + cos if literal else l1 + (1.0 - cos)


def observe_oracle(
    grid: OccupancyGrid,
    clutter: OccupancyGrid,
    gt: Pose2,
    v: int,
    fov: float = DEFAULT_FOV,
    sigma: float = 0.0,
    dropout: float = 0.0,
    seed: int | np.random.Generator | None = 0,
    max_range: float = DEFAULT_MAX_RANGE,
) -> RayScan:
    """Simulated ray observation rendered from the cluttered world.

    ``grid`` is the clean floorplan (only used to check ``gt``); rays come
    from ``clutter``, get Gaussian noise clamped to ``[0, max_range]``, and
    each ray independently drops out to ``max_range`` with probability
    ``dropout``.
    """
    if sigma < 0 or not 0.0 <= dropout <= 1.0:
        raise ValueError("need sigma >= 0 and dropout in [0, 1]")
    row, col = grid.world_to_cell(gt.x, gt.y)
    if not (grid.in_bounds(row, col) and grid.cells[row, col] == FREE):
        raise InvalidOriginError("ground-truth pose is not in a free floorplan cell")
    scan = render_scan(clutter, gt, v, fov, max_range)
    if sigma == 0 and dropout == 0:
        return scan
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    depths = scan.depths
    if sigma > 0:
        depths = np.clip(depths + rng.normal(0.0, sigma, size=scan.v), 0.0, max_range)
    if dropout > 0:
        depths = np.where(rng.random(scan.v) < dropout, max_range, depths)
    return scan.with_depths(depths)


class ObservationSource:
    """Configured oracle observation source bound to a world pair."""

    def __init__(
        self,
        grid: OccupancyGrid,
        clutter: OccupancyGrid | None = None,
        v: int = 40,
        fov: float = DEFAULT_FOV,
        sigma: float = 0.0,
        dropout: float = 0.0,
        seed: int = 0,
        max_range: float = DEFAULT_MAX_RANGE,
    ):
        self.grid = grid
        self.clutter = grid if clutter is None else clutter
        self.v, self.fov, self.sigma, self.dropout = v, fov, sigma, dropout
        self.max_range = max_range
        self._rng = np.random.default_rng(seed)

    def __call__(self, gt: Pose2) -> RayScan:
        return observe_oracle(
            self.grid, self.clutter, gt, self.v, self.fov, self.sigma, self.dropout,
            self._rng, self.max_range,
        )
