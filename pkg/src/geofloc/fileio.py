"""Readers and writers for every on-disk format the package exchanges.

Binary formats are little-endian with a 4-byte magic:

* ``FEAT``: u32 N, u32 F, then N*F float32 feature values (row-major)
* ``PDEP``: u32 V, u32 K, K float32 depth hypotheses, V*K float32 probabilities
* ``POST``: u32 H, u32 W, u32 O, then H*W*O float32 posterior values

Text formats are ``key=value`` files (``#`` comments, optional ``[section]``
headers that prefix keys as ``section.key``) and headed CSV tables.
"""

from __future__ import annotations

import csv
import dataclasses
import struct
from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image

from .errors import FormatError
from .floorplan import FREE, OCCUPIED, UNKNOWN, DEFAULT_FOV, OccupancyGrid, Pose2, RayScan, TWO_PI
from .geom import CameraIntrinsics, PointCloud, RigidPose3
from .metrics import LocalizationRecord
from .obsmodel import DepthDistribution

POSE_LOAD_TOL = 1e-6


# -- key=value text -----------------------------------------------------------

def read_keyvalue(path) -> dict[str, str]:
    out: dict[str, str] = {}
    section = ""
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[f"{section}.{key}" if section else key] = value
    return out


def write_keyvalue(path, values: dict) -> None:
    lines = [f"{k}={_fmt(v)}" for k, v in values.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(value: str, like):
    if isinstance(like, bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value


def dataclass_from_keyvalue(cls, values: dict[str, str], prefix: str = ""):
    """Build a dataclass from string values, typed after its defaults."""
    defaults = cls()
    kwargs = {}
    for f in dataclasses.fields(cls):
        key = prefix + f.name
        if key in values:
            kwargs[f.name] = _coerce(values[key], getattr(defaults, f.name))
    return cls(**kwargs)


# -- camera files -------------------------------------------------------------

def read_intrinsics(path) -> CameraIntrinsics:
    kv = read_keyvalue(path)
    try:
        return CameraIntrinsics(
            float(kv["fx"]), float(kv["fy"]), float(kv["cx"]), float(kv["cy"]),
            int(kv["width"]), int(kv["height"]),
        )
    except KeyError as e:
        raise FormatError(f"intrinsics file missing {e.args[0]}") from None


def write_intrinsics(path, K: CameraIntrinsics) -> None:
    write_keyvalue(path, dataclasses.asdict(K))


def read_poses(path, tol: float = POSE_LOAD_TOL) -> list[RigidPose3]:
    """Camera-to-world poses, four lines of a row-major 4x4 matrix per frame."""
    rows = [
        [float(x) for x in line.split()]
        for line in Path(path).read_text().splitlines()
        if line.strip()
    ]
    if len(rows) % 4 or any(len(r) != 4 for r in rows):
        raise FormatError("pose file must hold 4x4 matrices, four numbers per line")
    mats = np.array(rows).reshape(-1, 4, 4)
    return [RigidPose3.from_matrix(M, tol=tol) for M in mats]


def write_poses(path, poses: Iterable[RigidPose3]) -> None:
    lines = []
    for p in poses:
        for row in p.matrix:
            lines.append(" ".join(repr(float(x)) for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_depth_png(path) -> np.ndarray:
    """16-bit depth PNG in millimetres to metres (0 stays invalid)."""
    img = np.asarray(Image.open(path))
    if img.ndim != 2:
        raise FormatError("depth image must be single channel")
    return img.astype(np.float64) / 1000.0


def write_depth_png(path, depth: np.ndarray) -> None:
    mm = np.clip(np.round(np.asarray(depth) * 1000.0), 0, 65535).astype(np.uint16)
    Image.fromarray(mm).save(path, format="PNG")


# -- floorplans ---------------------------------------------------------------

def read_floorplan(image_path, meta_path=None, unknown_mask_path=None) -> OccupancyGrid:
    """8-bit raster (< 128 Occupied, >= 128 Free); image row 0 is the top (max y)."""
    img = np.asarray(Image.open(image_path).convert("L"))
    cells = np.where(img < 128, OCCUPIED, FREE).astype(np.uint8)
    if unknown_mask_path is not None:
        mask = np.asarray(Image.open(unknown_mask_path).convert("L"))
        if mask.shape != img.shape:
            raise FormatError("unknown mask size differs from floorplan")
        cells[mask > 0] = UNKNOWN
    resolution, origin = 0.1, (0.0, 0.0)
    if meta_path is not None:
        kv = read_keyvalue(meta_path)
        resolution = float(kv.get("resolution_m", resolution))
        origin = (float(kv.get("origin_x_m", 0.0)), float(kv.get("origin_y_m", 0.0)))
    return OccupancyGrid(cells[::-1].copy(), resolution, origin)


def write_floorplan(grid: OccupancyGrid, image_path, meta_path=None, unknown_mask_path=None) -> None:
    cells = grid.cells[::-1]
    img = np.where(cells == FREE, 255, 0).astype(np.uint8)
    Image.fromarray(img).save(image_path)
    if unknown_mask_path is not None:
        Image.fromarray(np.where(cells == UNKNOWN, 255, 0).astype(np.uint8)).save(unknown_mask_path)
    if meta_path is not None:
        write_keyvalue(meta_path, {
            "resolution_m": grid.resolution,
            "origin_x_m": grid.origin[0],
            "origin_y_m": grid.origin[1],
        })


# -- CSV tables ---------------------------------------------------------------

def write_csv(path, header: list[str], rows: Iterable[Iterable]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])


def read_csv(path, header: list[str]) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames)[: len(header)] != header:
            raise FormatError(f"{path}: expected header {','.join(header)}")
        return list(reader)


def write_scan(path, scan: RayScan) -> None:
    write_csv(path, ["angle_rad", "depth_m"], zip(scan.angles.tolist(), scan.depths.tolist()))


def read_scan(path, fov: float | None = None, max_range: float = 10.0) -> RayScan:
    rows = read_csv(path, ["angle_rad", "depth_m"])
    angles = np.array([float(r["angle_rad"]) for r in rows])
    depths = np.array([float(r["depth_m"]) for r in rows])
    if fov is None:
        if len(angles) < 2:
            fov = DEFAULT_FOV
        else:
            step = angles[1] - angles[0]
            full = abs(step * len(angles) - TWO_PI) < 1e-9
            fov = TWO_PI if full else step * (len(angles) - 1)
    return RayScan(fov, angles, depths, max_range)


def write_correspondences(path, corr) -> None:
    write_csv(path, ["ua", "va", "ub", "vb"], corr.pairs.tolist())


def read_correspondences(path) -> np.ndarray:
    rows = read_csv(path, ["ua", "va", "ub", "vb"])
    return np.array([[int(r[k]) for k in ("ua", "va", "ub", "vb")] for r in rows], dtype=np.int64).reshape(-1, 4)


def write_pair_list(path, pairs) -> None:
    write_csv(path, ["frame_a", "frame_b", "ratio"], [(i, j, float(r)) for (i, j), r in pairs])


def read_pair_list(path) -> list[tuple[tuple[int, int], float]]:
    rows = read_csv(path, ["frame_a", "frame_b", "ratio"])
    return [((int(r["frame_a"]), int(r["frame_b"])), float(r["ratio"])) for r in rows]


def write_xyz(path, cloud: PointCloud | np.ndarray) -> None:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud)
    np.savetxt(path, pts.reshape(-1, 3), fmt="%.9g")


def read_xyz(path) -> PointCloud:
    return PointCloud(np.loadtxt(path, ndmin=2).reshape(-1, 3))


def write_matches(path, M) -> None:
    write_csv(path, ["i", "j"], np.asarray(M, dtype=np.int64).reshape(-1, 2).tolist())


def read_matches(path) -> np.ndarray:
    rows = read_csv(path, ["i", "j"])
    return np.array([[int(r["i"]), int(r["j"])] for r in rows], dtype=np.int64).reshape(-1, 2)


def write_trajectory(path, poses: list[Pose2], deltas, scan_files: list[str] | None = None) -> None:
    scan_files = scan_files or [""] * len(poses)
    rows = [
        (t, p.x, p.y, p.phi, float(d[0]), float(d[1]), float(d[2]), f)
        for t, (p, d, f) in enumerate(zip(poses, deltas, scan_files))
    ]
    write_csv(path, ["step", "x", "y", "phi", "dx", "dy", "dphi", "scan_file"], rows)


def read_trajectory(path):
    rows = read_csv(path, ["step", "x", "y", "phi", "dx", "dy", "dphi"])
    poses = [Pose2(float(r["x"]), float(r["y"]), float(r["phi"])) for r in rows]
    deltas = [(float(r["dx"]), float(r["dy"]), float(r["dphi"])) for r in rows]
    files = [r.get("scan_file", "") or "" for r in rows]
    return poses, deltas, files


# -- binary formats -----------------------------------------------------------

def _read_magic(fh, magic: bytes):
    got = fh.read(4)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")


def _read_f32(fh, n: int) -> np.ndarray:
    buf = fh.read(4 * n)
    if len(buf) != 4 * n:
        raise FormatError("file truncated")
    return np.frombuffer(buf, dtype="<f4").astype(np.float64)


def write_features(path, vectors: np.ndarray) -> None:
    v = np.asarray(vectors, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(b"FEAT")
        fh.write(struct.pack("<II", *v.shape))
        fh.write(v.tobytes())


def read_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        _read_magic(fh, b"FEAT")
        n, f = struct.unpack("<II", fh.read(8))
        return _read_f32(fh, n * f).reshape(n, f)


def write_depth_distribution(path, P) -> None:
    with open(path, "wb") as fh:
        fh.write(b"PDEP")
        fh.write(struct.pack("<II", P.v, P.k))
        fh.write(np.asarray(P.depth_grid, dtype="<f4").tobytes())
        fh.write(np.asarray(P.probs, dtype="<f4").tobytes())


def read_depth_distribution(path, fov: float = DEFAULT_FOV):
    """Load a PDEP file; rows are renormalized in float64 after the float32 round trip."""
    with open(path, "rb") as fh:
        _read_magic(fh, b"PDEP")
        v, k = struct.unpack("<II", fh.read(8))
        grid = _read_f32(fh, k)
        probs = _read_f32(fh, v * k).reshape(v, k)
    probs /= probs.sum(axis=1, keepdims=True)
    return DepthDistribution(grid, probs, fov)


def write_posterior(path, probs: np.ndarray) -> None:
    p = np.asarray(probs, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(b"POST")
        fh.write(struct.pack("<III", *p.shape))
        fh.write(p.tobytes())


def read_posterior(path) -> np.ndarray:
    """Posterior volume ``(H, W, O)``, renormalized to unit mass in float64."""
    with open(path, "rb") as fh:
        _read_magic(fh, b"POST")
        h, w, o = struct.unpack("<III", fh.read(12))
        probs = _read_f32(fh, h * w * o).reshape(h, w, o)
    total = probs.sum()
    return probs / total if total > 0 else probs


def posterior_heatmap(probs: np.ndarray) -> np.ndarray:
    """8-bit image of the max-over-orientation posterior, top row = max y."""
    flat = np.asarray(probs).max(axis=2)
    peak = flat.max()
    scaled = flat / peak if peak > 0 else flat
    return np.round(scaled * 255.0).astype(np.uint8)[::-1]


def write_heatmap_pgm(path, probs: np.ndarray) -> None:
    Image.fromarray(posterior_heatmap(probs)).save(path, format="PPM")


# -- localization records -----------------------------------------------------

RECORD_HEADER = ["seq", "step", "est_x", "est_y", "est_phi", "gt_x", "gt_y", "gt_phi"]


def record_rows(records):
    return [
        (r.seq, r.step, r.estimate.x, r.estimate.y, r.estimate.phi,
         r.ground_truth.x, r.ground_truth.y, r.ground_truth.phi)
        for r in records
    ]


def write_records(path, records) -> None:
    write_csv(path, RECORD_HEADER, record_rows(records))


def append_records(path, records) -> None:
    """Append rows, writing the header first if the file is new."""
    new = not Path(path).exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(RECORD_HEADER)
        for row in record_rows(records):
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])


def read_records(path):
    out = []
    for r in read_csv(path, RECORD_HEADER):
        est = Pose2(float(r["est_x"]), float(r["est_y"]), float(r["est_phi"]))
        gt = Pose2(float(r["gt_x"]), float(r["gt_y"]), float(r["gt_phi"]))
        out.append(LocalizationRecord(int(r["seq"]), int(r["step"]), est, gt))
    return out
