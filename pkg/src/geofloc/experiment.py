"""Experiment orchestration: scenario suites, localization runs, artifacts, reports."""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import fileio
from .floorplan import TWO_PI, OccupancyGrid, Pose2, RayScan, render_scan
from .histogram_filter import (
    FilterParams,
    bin_centers,
    heading_bin,
    single_frame_localize,
    track,
)
from .metrics import DEFAULT_THRESHOLDS, LocalizationRecord, MetricReport, evaluate, final_records
from .obsmodel import (
    default_depth_grid,
    expected_scan,
    fuse,
    observe_oracle,
    scan_to_distribution,
    upsample_rays,
)
from .sim import Scenario, ScenarioSpec, Trajectory, _rng, gen_scenario

TRACK = "track"
SINGLE = "single"
MCL = "mcl"

RAW = "raw"  # oracle scan used as is
FUSED = "fused"  # expected scan of omega-fused distributions
SINGLE_ONLY = "single_only"  # expected scan of the upsampled single-frame distribution

MCL_RAYS = 72


@dataclass(frozen=True)
class ExperimentConfig:
    seeds: tuple[int, ...] = tuple(range(20))
    mode: str = TRACK
    obs_path: str = RAW
    omega: float = 0.5
    v_single: int = 20
    dist_sigma: float = 0.1
    n_hypotheses: int = 64
    snap: bool = False
    dump_posteriors: bool = True
    workers: int = 1
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    filter: FilterParams = field(default_factory=FilterParams)

    def __post_init__(self):
        if self.mode not in (TRACK, SINGLE, MCL):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.obs_path not in (RAW, FUSED, SINGLE_ONLY):
            raise ValueError(f"unknown observation path {self.obs_path!r}")
        if not self.seeds:
            raise ValueError("need at least one seed")

    def spec_for(self, seed: int) -> ScenarioSpec:
        return dataclasses.replace(self.scenario, seed=seed)

    def to_keyvalue(self) -> dict:
        out = {
            "seeds": ",".join(str(s) for s in self.seeds),
            "mode": self.mode,
            "obs_path": self.obs_path,
            "omega": self.omega,
            "v_single": self.v_single,
            "dist_sigma": self.dist_sigma,
            "n_hypotheses": self.n_hypotheses,
            "snap": self.snap,
            "dump_posteriors": self.dump_posteriors,
            "workers": self.workers,
        }
        out.update({f"scenario.{k}": v for k, v in dataclasses.asdict(self.scenario).items()})
        out.update({f"filter.{k}": v for k, v in dataclasses.asdict(self.filter).items()})
        return out

    @classmethod
    def from_keyvalue(cls, kv: dict[str, str]) -> "ExperimentConfig":
        base = cls()
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name in ("scenario", "filter", "seeds") or f.name not in kv:
                continue
            kwargs[f.name] = fileio._coerce(kv[f.name], getattr(base, f.name))
        if "seeds" in kv:
            kwargs["seeds"] = parse_seeds(kv["seeds"])
        kwargs["scenario"] = fileio.dataclass_from_keyvalue(ScenarioSpec, kv, "scenario.")
        kwargs["filter"] = fileio.dataclass_from_keyvalue(FilterParams, kv, "filter.")
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_keyvalue(fileio.read_keyvalue(path))


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"0-19"``, ``"3,5,8"`` or a mix such as ``"0-3,10"``."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def snap_pose(grid: OccupancyGrid, pose: Pose2, n_bins: int) -> Pose2:
    """Nearest hypothesis-lattice pose: cell centre plus orientation-bin centre."""
    row, col = grid.world_to_cell(pose.x, pose.y)
    x, y = grid.cell_center(row, col)
    return Pose2(x, y, bin_centers(n_bins)[heading_bin(pose.phi, n_bins)])


def snapped_scenario(sc: Scenario, n_bins: int) -> Scenario:
    """Scenario whose poses sit on the lattice, with observations re-rendered."""
    spec = sc.spec
    poses = [snap_pose(sc.grid, p, n_bins) for p in sc.trajectory.poses]
    deltas = [(0.0, 0.0, 0.0)] + [b.relative_to(a) for a, b in zip(poses, poses[1:])]
    rng = _rng(spec, 3)
    obs = [
        observe_oracle(sc.grid, sc.cluttered, p, spec.n_rays, spec.fov, spec.sigma,
                       spec.dropout, rng, spec.max_range)
        for p in poses
    ]
    return Scenario(spec, sc.grid, sc.cluttered, Trajectory(poses, deltas, obs))


def observations_for(sc: Scenario, cfg: ExperimentConfig) -> list[RayScan]:
    """Observation stream for the configured path.

    ``fused`` and ``single_only`` build hypothesis distributions from a
    coarse ``v_single``-ray oracle scan and the full-resolution scan, then
    reduce them to an expected scan.
    """
    tr = sc.trajectory
    if cfg.obs_path == RAW:
        return list(tr.observations)
    spec = sc.spec
    grid = default_depth_grid(cfg.n_hypotheses, 0.1, spec.max_range)
    rng = _rng(spec, 4)
    out = []
    for pose, obs in zip(tr.poses, tr.observations):
        coarse = observe_oracle(sc.grid, sc.cluttered, pose, cfg.v_single, spec.fov,
                                spec.sigma, spec.dropout, rng, spec.max_range)
        p_single = scan_to_distribution(coarse, grid, cfg.dist_sigma)
        if cfg.obs_path == SINGLE_ONLY:
            P = upsample_rays(p_single, obs.v)
        else:
            P = fuse(p_single, scan_to_distribution(obs, grid, cfg.dist_sigma), cfg.omega)
        out.append(expected_scan(P, obs.fov, spec.max_range))
    return out


@dataclass
class SequenceResult:
    seq: int
    records: list[LocalizationRecord]
    posterior: np.ndarray | None


def mcl_baseline(
    grid: OccupancyGrid,
    trajectory: Trajectory,
    v: int = MCL_RAYS,
    params: FilterParams = FilterParams(),
    seq: int = 0,
    keep_posterior: bool = False,
):
    """Histogram filter fed 360-degree noiseless range scans of the clean floorplan."""
    scans = [render_scan(grid, p, v, TWO_PI, params.max_range, params.unknown_blocks)
             for p in trajectory.poses]
    res = track(grid, scans, trajectory.deltas, params)
    records = [
        LocalizationRecord(seq, t, est, gt, label="baseline")
        for t, (est, gt) in enumerate(zip(res.estimates, trajectory.poses))
    ]
    if keep_posterior:
        return records, res.posterior
    return records


def run_sequence(cfg: ExperimentConfig, seed: int) -> SequenceResult:
    sc = gen_scenario(cfg.spec_for(seed))
    if cfg.snap:
        sc = snapped_scenario(sc, cfg.filter.n_bins)
    poses = sc.trajectory.poses
    if cfg.mode == MCL:
        records, post = mcl_baseline(sc.grid, sc.trajectory, MCL_RAYS, cfg.filter, seed, True)
        return SequenceResult(seed, records, post.probs)
    observations = observations_for(sc, cfg)
    if cfg.mode == SINGLE:
        records, vol = [], None
        for t, (obs, gt) in enumerate(zip(observations, poses)):
            est, vol = single_frame_localize(sc.grid, obs, params=cfg.filter)
            records.append(LocalizationRecord(seed, t, est, gt))
        return SequenceResult(seed, records, vol)
    res = track(sc.grid, observations, sc.trajectory.deltas, cfg.filter)
    records = [LocalizationRecord(seed, t, est, gt)
               for t, (est, gt) in enumerate(zip(res.estimates, poses))]
    return SequenceResult(seed, records, res.posterior.probs)


def _run_one(args):
    return run_sequence(*args)


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> MetricReport:
    """Run every seed, write artifacts under ``out_dir`` and return the report.

    Artifacts: ``config.txt``, ``records.csv``, ``report.csv``,
    ``report.txt``, ``curve.csv``, and per-sequence ``posteriors/*.post`` and
    ``heatmaps/*.pgm``. Records are appended sequence by sequence so a
    failure leaves the finished sequences on disk.
    """
    out = None if out_dir is None else Path(out_dir)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        fileio.write_keyvalue(out / "config.txt", cfg.to_keyvalue())
        (out / "records.csv").unlink(missing_ok=True)
        if cfg.dump_posteriors:
            (out / "posteriors").mkdir(exist_ok=True)
            (out / "heatmaps").mkdir(exist_ok=True)
    jobs = [(cfg, s) for s in cfg.seeds]
    records: list[LocalizationRecord] = []
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = pool.map(_run_one, jobs)
            for res in results:
                _collect(res, out, cfg, records)
    else:
        for job in jobs:
            _collect(_run_one(job), out, cfg, records)
    report = evaluate(records, DEFAULT_THRESHOLDS)
    if out is not None:
        write_report(out, report)
    return report


def _collect(res: SequenceResult, out: Path | None, cfg: ExperimentConfig, records: list) -> None:
    records.extend(res.records)
    if out is None:
        return
    fileio.append_records(out / "records.csv", res.records)
    if cfg.dump_posteriors and res.posterior is not None:
        fileio.write_posterior(out / "posteriors" / f"seq_{res.seq:04d}.post", res.posterior)
        fileio.write_heatmap_pgm(out / "heatmaps" / f"seq_{res.seq:04d}.pgm", res.posterior)


def write_report(out_dir, report: MetricReport) -> None:
    out = Path(out_dir)
    fileio.write_csv(out / "report.csv", ["metric", "value"], report.rows())
    (out / "report.txt").write_text(report.text())
    fileio.write_csv(out / "curve.csv", ["step", "success_rate"], report.curve)


def final_errors(records: Sequence[LocalizationRecord]) -> list[float]:
    return [r.position_error for r in final_records(records)]


def converged_step(records: Sequence[LocalizationRecord], grid: OccupancyGrid, cells: int = 1) -> int:
    """First step after which every estimate stays within ``cells`` grid cells of truth."""
    bad = -1
    for r in sorted(records, key=lambda r: r.step):
        r1, c1 = grid.world_to_cell(r.estimate.x, r.estimate.y)
        r2, c2 = grid.world_to_cell(r.ground_truth.x, r.ground_truth.y)
        if max(abs(r1 - r2), abs(c1 - c2)) > cells:
            bad = r.step
    return bad + 1

