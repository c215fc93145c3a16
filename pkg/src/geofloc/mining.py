"""Hard-constraint correspondence mining between RGB-D frames and scene surfaces.

Two products:

* pixel-to-pixel correspondences between two depth frames whose world
  points agree within a distance threshold (one-to-one, mutual nearest
  neighbour), and the overlap ratio used to select training pairs;
* frustum chunks cropped from a surface point cloud, and pixel-to-point
  associations between a frame and its chunk.

Nearest-neighbour queries go through a uniform voxel hash whose cell size
equals the query radius, so only the 27 surrounding voxels are scanned.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import IntrinsicsMismatchError
from .floorplan import DEFAULT_MAX_RANGE
from .geom import (
    CameraIntrinsics,
    PointCloud,
    RigidPose3,
    as_depth_image,
    depth_to_cloud,
    frustum_of,
)

DEFAULT_THRESHOLD = 0.02
DEFAULT_MIN_RATIO = 0.30
DEFAULT_PIXEL_STRIDE = 4
DEFAULT_CHUNK_RESOLUTION = 0.02

_KEY_BITS = 21
_KEY_OFFSET = 1 << (_KEY_BITS - 1)
_NEIGHBOURS = np.array(list(product((-1, 0, 1), repeat=3)), dtype=np.int64)


def _voxel_coords(points: np.ndarray, cell: float) -> np.ndarray:
    return np.floor(points / cell).astype(np.int64)


def _encode(vox: np.ndarray) -> np.ndarray:
    v = vox + _KEY_OFFSET
    return (v[:, 0] << (2 * _KEY_BITS)) | (v[:, 1] << _KEY_BITS) | v[:, 2]


class VoxelHash:
    """Uniform voxel bucketing of a fixed reference point set."""

    def __init__(self, points: np.ndarray, cell: float):
        if not cell > 0:
            raise ValueError("cell size must be positive")
        self.points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        self.cell = float(cell)
        keys = _encode(_voxel_coords(self.points, self.cell))
        self._order = np.argsort(keys, kind="stable")
        self._keys = keys[self._order]

    def nearest(self, queries: np.ndarray, radius: float) -> tuple[np.ndarray, np.ndarray]:
        """Nearest reference point within ``radius`` of each query.

        ``radius`` must not exceed the cell size. Ties go to the smallest
        reference index. Returns ``(index, squared_distance)`` with index -1
        (and distance inf) where nothing lies within range.
        """
        if radius > self.cell:
            raise ValueError("radius exceeds voxel cell size")
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        n = len(q)
        best = np.full(n, -1, dtype=np.int64)
        best_d2 = np.full(n, np.inf)
        if n == 0 or len(self.points) == 0:
            return best, best_d2
        qvox = _voxel_coords(q, self.cell)
        qi_parts, ri_parts = [], []
        for off in _NEIGHBOURS:
            keys = _encode(qvox + off)
            lo = np.searchsorted(self._keys, keys, side="left")
            hi = np.searchsorted(self._keys, keys, side="right")
            counts = hi - lo
            total = int(counts.sum())
            if total == 0:
                continue
            qi = np.repeat(np.arange(n), counts)
            starts = np.repeat(lo - np.cumsum(counts) + counts, counts)
            ri = self._order[starts + np.arange(total)]
            qi_parts.append(qi)
            ri_parts.append(ri)
        if not qi_parts:
            return best, best_d2
        qi = np.concatenate(qi_parts)
        ri = np.concatenate(ri_parts)
        d2 = ((q[qi] - self.points[ri]) ** 2).sum(axis=1)
        keep = d2 <= radius * radius
        qi, ri, d2 = qi[keep], ri[keep], d2[keep]
        if len(qi) == 0:
            return best, best_d2
        order = np.lexsort((ri, d2, qi))
        qi, ri, d2 = qi[order], ri[order], d2[order]
        first = np.ones(len(qi), dtype=bool)
        first[1:] = qi[1:] != qi[:-1]
        best[qi[first]] = ri[first]
        best_d2[qi[first]] = d2[first]
        return best, best_d2


def mutual_nearest(a: np.ndarray, b: np.ndarray, threshold: float) -> np.ndarray:
    """One-to-one mutual nearest-neighbour pairs within ``threshold``.

    Returns an ``(n, 2)`` array of ``(index_a, index_b)`` sorted by
    ``index_a``. Ties resolve to the smaller index on either side.
    """
    if len(a) == 0 or len(b) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    nn_ab, _ = VoxelHash(b, threshold).nearest(a, threshold)
    nn_ba, _ = VoxelHash(a, threshold).nearest(b, threshold)
    ia = np.nonzero(nn_ab >= 0)[0]
    ib = nn_ab[ia]
    mutual = nn_ba[ib] == ia
    return np.stack([ia[mutual], ib[mutual]], axis=1)


@dataclass(frozen=True, eq=False)
class PixelCorrespondenceSet:
    frame_a: int
    frame_b: int
    pairs: np.ndarray  # (n, 4): ua, va, ub, vb
    ratio: float
    valid_a: int
    valid_b: int

    def __len__(self):
        return len(self.pairs)

    def transposed(self) -> "PixelCorrespondenceSet":
        swapped = self.pairs[:, [2, 3, 0, 1]]
        return PixelCorrespondenceSet(
            self.frame_b, self.frame_a, swapped, self.ratio, self.valid_b, self.valid_a
        )

    def as_set(self) -> set[tuple[int, int, int, int]]:
        return {tuple(int(x) for x in row) for row in self.pairs}


def overlap_ratio(n_pairs: int, valid_a: int, valid_b: int) -> float:
    """Matched pixels in both frames over valid pixels in both frames."""
    total = valid_a + valid_b
    return 0.0 if total == 0 else 2.0 * n_pairs / total


def _check_frame(D: np.ndarray, K: CameraIntrinsics):
    if D.shape != (K.height, K.width):
        raise IntrinsicsMismatchError(
            f"depth image {D.shape[1]}x{D.shape[0]} does not match intrinsics {K.width}x{K.height}"
        )


def _correspond_clouds(ca: PointCloud, cb: PointCloud, threshold: float, ids=(0, 1)):
    pairs = mutual_nearest(ca.points, cb.points, threshold)
    uv = np.hstack([ca.source[pairs[:, 0]], cb.source[pairs[:, 1]]])
    return PixelCorrespondenceSet(
        ids[0], ids[1], uv.reshape(-1, 4), overlap_ratio(len(pairs), len(ca), len(cb)),
        len(ca), len(cb),
    )


def find_correspondences(
    Da,
    Db,
    K: CameraIntrinsics,
    Pa: RigidPose3,
    Pb: RigidPose3,
    threshold: float = DEFAULT_THRESHOLD,
    stride: int = 1,
    K_b: CameraIntrinsics | None = None,
    frame_ids: tuple[int, int] = (0, 1),
) -> PixelCorrespondenceSet:
    """Pixel correspondences between two depth frames.

    Valid pixels of both frames (sampled on a ``stride`` lattice) are lifted
    to world points; a pair is kept when the points are each other's nearest
    neighbour and lie within ``threshold`` metres. ``ratio`` is
    ``2 * |pairs| / (valid_a + valid_b)``.
    """
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    if K_b is not None and K_b != K:
        raise IntrinsicsMismatchError("frames must share intrinsics")
    Da, Db = as_depth_image(Da), as_depth_image(Db)
    _check_frame(Da, K)
    _check_frame(Db, K)
    ca = depth_to_cloud(Da, K, Pa, stride)
    cb = depth_to_cloud(Db, K, Pb, stride)
    return _correspond_clouds(ca, cb, threshold, frame_ids)


def mine_pairs(
    sequence,
    K: CameraIntrinsics,
    min_ratio: float = DEFAULT_MIN_RATIO,
    frame_stride: int = 1,
    pixel_stride: int = DEFAULT_PIXEL_STRIDE,
    threshold: float = DEFAULT_THRESHOLD,
) -> list[tuple[tuple[int, int], float]]:
    """Frame pairs ``(i, j)``, ``i < j``, whose overlap ratio is at least ``min_ratio``.

    ``sequence`` is a list of ``(depth_image, RigidPose3)``; only every
    ``frame_stride``-th frame takes part.
    """
    if len(sequence) < 2:
        raise ValueError("need at least two frames")
    ids = list(range(0, len(sequence), frame_stride))
    clouds = {}
    for i in ids:
        D, pose = sequence[i]
        D = as_depth_image(D)
        _check_frame(D, K)
        clouds[i] = depth_to_cloud(D, K, pose, pixel_stride)
    out = []
    for a_pos, i in enumerate(ids):
        for j in ids[a_pos + 1 :]:
            ratio = _correspond_clouds(clouds[i], clouds[j], threshold, (i, j)).ratio
            if ratio >= min_ratio:
                out.append(((i, j), ratio))
    return out


def voxel_downsample(points: np.ndarray, resolution: float) -> np.ndarray:
    """Replace the points of each occupied voxel by their centroid.

    Output is ordered by voxel key, so downsampling twice at the same
    resolution is a no-op.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        return points.copy()
    keys = _encode(_voxel_coords(points, resolution))
    uniq, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
    sums = np.zeros((len(uniq), 3))
    np.add.at(sums, inverse.reshape(-1), points)
    return sums / counts[:, None]


@dataclass(frozen=True, eq=False)
class FrustumChunk:
    frame_id: int
    points: PointCloud
    bounds: tuple[np.ndarray, np.ndarray]
    resolution: float

    def __len__(self):
        return len(self.points)


def depth_range(D: np.ndarray, max_range: float = DEFAULT_MAX_RANGE) -> tuple[float, float]:
    """Near/far planes from the valid depths of a frame (fallback ``[0.1, max_range]``)."""
    valid = D[D > 0]
    if len(valid) == 0:
        return 0.1, max_range
    lo, hi = float(valid.min()), float(valid.max())
    if hi <= lo:
        hi = lo + 1e-6
    return lo, hi


def crop_frustum_chunk(
    S: PointCloud,
    K: CameraIntrinsics,
    pose: RigidPose3,
    D,
    resolution: float = DEFAULT_CHUNK_RESOLUTION,
    frame_id: int = 0,
    max_range: float = DEFAULT_MAX_RANGE,
) -> FrustumChunk:
    """Surface points inside the axis-aligned box of the frame's frustum, voxelized."""
    D = as_depth_image(D)
    d_min, d_max = depth_range(D, max_range)
    lo, hi = frustum_of(K, pose, d_min, d_max).aabb()
    pts = S.points
    inside = np.all((pts >= lo) & (pts <= hi), axis=1)
    down = voxel_downsample(pts[inside], resolution)
    return FrustumChunk(frame_id, PointCloud(down), (lo, hi), resolution)


@dataclass(frozen=True, eq=False)
class PixelPointCorrespondenceSet:
    frame_id: int
    pixels: np.ndarray  # (n, 2): u, v
    point_index: np.ndarray  # (n,)

    def __len__(self):
        return len(self.pixels)

    def as_set(self) -> set[tuple[int, int, int]]:
        return {
            (int(u), int(v), int(k)) for (u, v), k in zip(self.pixels, self.point_index)
        }


def associate_pixels_points(
    D,
    K: CameraIntrinsics,
    pose: RigidPose3,
    chunk: FrustumChunk,
    threshold: float = DEFAULT_THRESHOLD,
    stride: int = 1,
) -> PixelPointCorrespondenceSet:
    """Match each valid pixel's world point to its nearest chunk point within ``threshold``."""
    D = as_depth_image(D)
    _check_frame(D, K)
    cloud = depth_to_cloud(D, K, pose, stride)
    nn, _ = VoxelHash(chunk.points.points, threshold).nearest(cloud.points, threshold)
    hit = nn >= 0
    return PixelPointCorrespondenceSet(chunk.frame_id, cloud.source[hit], nn[hit])
