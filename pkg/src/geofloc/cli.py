"""Command-line interface: ``geofloc <subcommand> [options]``.

Global flags (``--seed``, ``--config``, ``--out-dir``, ``--sigma-m``,
``--dropout``, ``--loss-literal``) may appear before or after the subcommand.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys
from pathlib import Path

import numpy as np

from . import fileio
from .contrastive import DEFAULT_TAU, gradient_check, point_info_nce
from .errors import GeoflocError
from .experiment import ExperimentConfig, mcl_baseline, run_experiment, write_report
from .floorplan import DEFAULT_FOV, TWO_PI, Pose2, render_scan
from .histogram_filter import PosteriorGrid, single_frame_localize, track
from .metrics import LocalizationRecord, evaluate
from .mining import (
    DEFAULT_CHUNK_RESOLUTION,
    DEFAULT_MIN_RATIO,
    DEFAULT_PIXEL_STRIDE,
    DEFAULT_THRESHOLD,
    associate_pixels_points,
    crop_frustum_chunk,
    find_correspondences,
    mine_pairs,
)
from .obsmodel import floc_loss
from .sim import (
    Trajectory,
    add_clutter,
    camera_intrinsics,
    frames_for_poses,
    gen_floorplan,
    gen_trajectory,
    surface_cloud,
)

DEPTH_DIR = "depth"
SCAN_DIR = "scans"


def _globals(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=d(None), help="RNG seed override")
    parser.add_argument("--config", type=Path, default=d(None), help="key=value config file")
    parser.add_argument("--out-dir", type=Path, default=d(Path("out")), help="output directory")
    parser.add_argument("--sigma-m", type=float, default=d(None), help="ray noise std (m)")
    parser.add_argument("--dropout", type=float, default=d(None), help="ray dropout probability")
    parser.add_argument("--loss-literal", action="store_true", default=d(False),
                        help="use the literal (+cos) shape term in the FLoc loss")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="geofloc", description=__doc__.splitlines()[0])
    _globals(p, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _globals(common, suppress=True)
    sub = p.add_subparsers(dest="command", required=True)

    def cmd(name, help_):
        return sub.add_parser(name, parents=[common], help=help_)

    s = cmd("mine", "mine overlapping frame pairs and pixel correspondences")
    s.add_argument("--data", type=Path, required=True, help="RGB-D directory from `simulate --rgbd`")
    s.add_argument("--min-ratio", type=float, default=DEFAULT_MIN_RATIO)
    s.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    s.add_argument("--pixel-stride", type=int, default=DEFAULT_PIXEL_STRIDE)
    s.add_argument("--frame-stride", type=int, default=1)

    s = cmd("chunks", "crop frustum chunks and pixel-point associations")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--resolution", type=float, default=DEFAULT_CHUNK_RESOLUTION)
    s.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    s.add_argument("--stride", type=int, default=1)

    s = cmd("loss", "evaluate PointInfoNCE on feature files or the FLoc loss on two scans")
    s.add_argument("--a", type=Path, help="FEAT file of anchors")
    s.add_argument("--b", type=Path, help="FEAT file of candidates")
    s.add_argument("--matches", type=Path, help="CSV of i,j matches")
    s.add_argument("--tau", type=float, default=DEFAULT_TAU)
    s.add_argument("--pool", choices=("matches", "all"), default="matches")
    s.add_argument("--exclude-self", action="store_true")
    s.add_argument("--pred", type=Path, help="predicted scan CSV")
    s.add_argument("--ref", type=Path, help="reference scan CSV")

    s = cmd("grad-check", "compare analytic and numeric PointInfoNCE gradients")
    s.add_argument("--instances", type=int, default=10)
    s.add_argument("--n", type=int, default=8)
    s.add_argument("--dim", type=int, default=16)
    s.add_argument("--tau", type=float, default=DEFAULT_TAU)
    s.add_argument("--pool", choices=("matches", "all"), default="matches")
    s.add_argument("--h", type=float, default=1e-6)

    s = cmd("simulate", "generate a floorplan, trajectory and observations")
    s.add_argument("--rgbd", action="store_true", help="also write depth frames and a surface cloud")

    s = cmd("localize", "single-frame localization of one scan")
    s.add_argument("--floorplan", type=Path, required=True)
    s.add_argument("--scan", type=Path, required=True)

    s = cmd("track", "histogram-filter tracking over a trajectory file")
    s.add_argument("--floorplan", type=Path, required=True)
    s.add_argument("--trajectory", type=Path, required=True)

    s = cmd("mcl", "baseline filter with 360-degree ground-truth range scans")
    s.add_argument("--floorplan", type=Path, required=True)
    s.add_argument("--trajectory", type=Path, required=True)
    s.add_argument("--rays", type=int, default=72)

    s = cmd("eval", "score a records CSV, or run the configured experiment")
    s.add_argument("--records", type=Path)

    s = cmd("render", "posterior heatmap PGM, or a ray scan at a pose")
    s.add_argument("--posterior", type=Path, help="POST file to turn into a heatmap")
    s.add_argument("--floorplan", type=Path)
    s.add_argument("--pose", type=str, help="x,y,phi in metres and radians")
    s.add_argument("--rays", type=int, default=40)
    s.add_argument("--fov-deg", type=float, default=math.degrees(DEFAULT_FOV))
    return p


# -- helpers ------------------------------------------------------------------

def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig() if args.config is None else ExperimentConfig.load(args.config)
    spec = cfg.scenario
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
        cfg = dataclasses.replace(cfg, seeds=(args.seed,))
    if args.sigma_m is not None:
        spec = dataclasses.replace(spec, sigma=args.sigma_m)
    if args.dropout is not None:
        spec = dataclasses.replace(spec, dropout=args.dropout)
    return dataclasses.replace(cfg, scenario=spec)


def _meta_path(image: Path) -> Path | None:
    meta = image.with_suffix(".txt")
    return meta if meta.exists() else None


def _load_floorplan(path: Path):
    unknown = path.with_name(path.stem + "_unknown" + path.suffix)
    return fileio.read_floorplan(path, _meta_path(path), unknown if unknown.exists() else None)


def _load_rgbd(data: Path):
    K = fileio.read_intrinsics(data / "intrinsics.txt")
    poses = fileio.read_poses(data / "poses.txt")
    depths = [fileio.read_depth_png(data / DEPTH_DIR / f"{i:06d}.png") for i in range(len(poses))]
    return K, list(zip(depths, poses))


def _load_trajectory(path: Path, fov: float | None = None):
    poses, deltas, files = fileio.read_trajectory(path)
    obs = [fileio.read_scan(path.parent / f, fov) for f in files]
    return Trajectory(poses, deltas, obs)


def _out(args) -> Path:
    args.out_dir.mkdir(parents=True, exist_ok=True)
    return args.out_dir


def _dump_posterior(out: Path, name: str, probs: np.ndarray) -> None:
    fileio.write_posterior(out / f"{name}.post", probs)
    fileio.write_heatmap_pgm(out / f"{name}.pgm", probs)


# -- subcommands --------------------------------------------------------------

def cmd_mine(args) -> int:
    K, frames = _load_rgbd(args.data)
    out = _out(args)
    pairs = mine_pairs(frames, K, args.min_ratio, args.frame_stride, args.pixel_stride, args.threshold)
    fileio.write_pair_list(out / "pairs.csv", pairs)
    for (i, j), ratio in pairs:
        (Da, Pa), (Db, Pb) = frames[i], frames[j]
        corr = find_correspondences(Da, Db, K, Pa, Pb, args.threshold, args.pixel_stride, frame_ids=(i, j))
        fileio.write_correspondences(out / f"corr_{i:06d}_{j:06d}.csv", corr)
    print(f"{len(pairs)} pairs with ratio >= {args.min_ratio}")
    return 0


def cmd_chunks(args) -> int:
    K, frames = _load_rgbd(args.data)
    surface = fileio.read_xyz(args.data / "surface.xyz")
    out = _out(args)
    for i, (D, pose) in enumerate(frames):
        chunk = crop_frustum_chunk(surface, K, pose, D, args.resolution, frame_id=i)
        fileio.write_xyz(out / f"chunk_{i:06d}.xyz", chunk.points)
        assoc = associate_pixels_points(D, K, pose, chunk, args.threshold, args.stride)
        fileio.write_csv(out / f"assoc_{i:06d}.csv", ["u", "v", "point"],
                         np.column_stack([assoc.pixels, assoc.point_index]).tolist())
        print(f"frame {i}: {len(chunk)} chunk points, {len(assoc)} associations")
    return 0


def cmd_loss(args) -> int:
    if args.pred is not None and args.ref is not None:
        d, d_star = fileio.read_scan(args.pred), fileio.read_scan(args.ref)
        print(f"{floc_loss(d, d_star, literal=args.loss_literal):.12g}")
        return 0
    if args.a is None or args.b is None or args.matches is None:
        raise SystemExit("loss needs --a/--b/--matches or --pred/--ref")
    A, B = fileio.read_features(args.a), fileio.read_features(args.b)
    M = fileio.read_matches(args.matches)
    print(f"{point_info_nce(A, B, M, args.tau, args.pool, args.exclude_self):.12g}")
    return 0


def cmd_grad_check(args) -> int:
    rng = np.random.default_rng(0 if args.seed is None else args.seed)
    worst = 0.0
    for _ in range(args.instances):
        A = rng.normal(size=(args.n, args.dim))
        B = rng.normal(size=(args.n, args.dim))
        A /= np.linalg.norm(A, axis=1, keepdims=True)
        B /= np.linalg.norm(B, axis=1, keepdims=True)
        k = int(rng.integers(1, args.n + 1))
        M = np.column_stack([rng.choice(args.n, k, replace=False), rng.choice(args.n, k, replace=False)])
        worst = max(worst, gradient_check(A, B, M, args.tau, args.pool, h=args.h))
    print(f"max relative error {worst:.3e} over {args.instances} instances")
    return 0 if worst < 1e-4 else 1


def cmd_simulate(args) -> int:
    cfg = _config(args)
    spec = cfg.scenario
    out = _out(args)
    grid = gen_floorplan(spec)
    cluttered = add_clutter(grid, spec)
    traj = gen_trajectory(grid, cluttered, spec)
    fileio.write_keyvalue(out / "scenario.txt", dataclasses.asdict(spec))
    fileio.write_floorplan(grid, out / "floorplan.png", out / "floorplan.txt")
    fileio.write_floorplan(cluttered, out / "clutter.png", out / "clutter.txt")
    (out / SCAN_DIR).mkdir(exist_ok=True)
    files = []
    for t, scan in enumerate(traj.observations):
        name = f"{SCAN_DIR}/{t:06d}.csv"
        fileio.write_scan(out / name, scan)
        files.append(name)
    fileio.write_trajectory(out / "trajectory.csv", traj.poses, traj.deltas, files)
    if args.rgbd:
        frames = frames_for_poses(grid, spec, traj.poses)
        (out / DEPTH_DIR).mkdir(exist_ok=True)
        for i, (D, _) in enumerate(frames):
            fileio.write_depth_png(out / DEPTH_DIR / f"{i:06d}.png", D)
        fileio.write_intrinsics(out / "intrinsics.txt", camera_intrinsics(spec))
        fileio.write_poses(out / "poses.txt", [pose for _, pose in frames])
        fileio.write_xyz(out / "surface.xyz", surface_cloud(grid))
    print(f"wrote {len(traj)} steps to {out}")
    return 0


def cmd_localize(args) -> int:
    cfg = _config(args)
    grid = _load_floorplan(args.floorplan)
    scan = fileio.read_scan(args.scan)
    est, vol = single_frame_localize(grid, scan, params=cfg.filter)
    out = _out(args)
    _dump_posterior(out, "single_frame", vol)
    print(f"{est.x:.6f},{est.y:.6f},{est.phi:.6f}")
    return 0


def _write_track(out: Path, records, posterior: PosteriorGrid, name: str) -> None:
    fileio.write_records(out / f"{name}_records.csv", records)
    _dump_posterior(out, name, posterior.probs)
    write_report(out, evaluate(records))


def cmd_track(args) -> int:
    cfg = _config(args)
    grid = _load_floorplan(args.floorplan)
    traj = _load_trajectory(args.trajectory)
    res = track(grid, traj.observations, traj.deltas, cfg.filter)
    records = [LocalizationRecord(0, t, e, g) for t, (e, g) in enumerate(zip(res.estimates, traj.poses))]
    out = _out(args)
    _write_track(out, records, res.posterior, "track")
    print(evaluate(records).text(), end="")
    return 0


def cmd_mcl(args) -> int:
    cfg = _config(args)
    grid = _load_floorplan(args.floorplan)
    traj = _load_trajectory(args.trajectory)
    records, post = mcl_baseline(grid, traj, args.rays, cfg.filter, keep_posterior=True)
    out = _out(args)
    _write_track(out, records, post, "mcl")
    print(evaluate(records).text(), end="")
    return 0


def cmd_eval(args) -> int:
    if args.records is not None:
        report = evaluate(fileio.read_records(args.records))
        write_report(_out(args), report)
    else:
        report = run_experiment(_config(args), _out(args))
    print(report.text(), end="")
    return 0


def cmd_render(args) -> int:
    out = _out(args)
    if args.posterior is not None:
        probs = fileio.read_posterior(args.posterior)
        fileio.write_heatmap_pgm(out / (args.posterior.stem + ".pgm"), probs)
        return 0
    if args.floorplan is None or args.pose is None:
        raise SystemExit("render needs --posterior, or --floorplan with --pose")
    x, y, phi = (float(s) for s in args.pose.split(","))
    grid = _load_floorplan(args.floorplan)
    fov = min(math.radians(args.fov_deg), TWO_PI)
    fileio.write_scan(out / "scan.csv", render_scan(grid, Pose2(x, y, phi), args.rays, fov))
    return 0


COMMANDS = {
    "mine": cmd_mine,
    "chunks": cmd_chunks,
    "loss": cmd_loss,
    "grad-check": cmd_grad_check,
    "simulate": cmd_simulate,
    "localize": cmd_localize,
    "track": cmd_track,
    "mcl": cmd_mcl,
    "eval": cmd_eval,
    "render": cmd_render,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except GeoflocError as e:
        print(f"geofloc {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
