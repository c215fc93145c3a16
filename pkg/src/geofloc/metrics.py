"""Localization metrics: success rate at distance/angle thresholds and RMSE."""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyRecordsError, NoSuccessesError
from .floorplan import Pose2, wrap_angle

SUCC = "Succ"
ALL = "All"

# (radius m, max angle rad or None)
DEFAULT_THRESHOLDS: tuple[tuple[float, float | None], ...] = (
    (0.1, None),
    (0.2, None),
    (0.5, None),
    (1.0, None),
    (1.0, math.radians(30.0)),
)


@dataclass(frozen=True)
class LocalizationRecord:
    seq: int
    step: int
    estimate: Pose2
    ground_truth: Pose2
    label: str = ""

    def __post_init__(self):
        vals = (self.estimate.x, self.estimate.y, self.estimate.phi,
                self.ground_truth.x, self.ground_truth.y, self.ground_truth.phi)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("record poses must be finite")

    @property
    def position_error(self) -> float:
        return math.hypot(self.estimate.x - self.ground_truth.x, self.estimate.y - self.ground_truth.y)

    @property
    def angle_error(self) -> float:
        """Absolute heading error in ``[0, pi]``."""
        return abs(wrap_angle(self.estimate.phi - self.ground_truth.phi))


def threshold_name(radius: float, max_angle: float | None) -> str:
    name = f"SR@{radius:g}m"
    if max_angle is not None:
        name += f"{math.degrees(max_angle):g}deg"
    return name


def by_sequence(records: Iterable[LocalizationRecord]) -> "OrderedDict[int, list[LocalizationRecord]]":
    seqs: OrderedDict[int, list[LocalizationRecord]] = OrderedDict()
    for r in sorted(records, key=lambda r: (r.seq, r.step)):
        seqs.setdefault(r.seq, []).append(r)
    return seqs


def final_records(records: Iterable[LocalizationRecord]) -> list[LocalizationRecord]:
    return [rs[-1] for rs in by_sequence(records).values()]


def success_rate(
    records: Sequence[LocalizationRecord], radius: float, max_angle: float | None = None
) -> float:
    """Fraction of sequences whose final-step estimate lies within the thresholds."""
    finals = final_records(records)
    if not finals:
        raise EmptyRecordsError("no records")
    hits = sum(
        r.position_error <= radius and (max_angle is None or r.angle_error <= max_angle)
        for r in finals
    )
    return hits / len(finals)


def rmse(records: Sequence[LocalizationRecord], mode: str = SUCC, success_radius: float = 1.0) -> float:
    """Root-mean-square positional error.

    ``All`` pools every step of every sequence. ``Succ`` keeps only sequences
    whose final error is within ``success_radius``, and for each of those
    only the steps from the first one within ``success_radius`` onward.
    """
    seqs = by_sequence(records)
    if not seqs:
        raise EmptyRecordsError("no records")
    if mode == ALL:
        errs = [r.position_error for rs in seqs.values() for r in rs]
    elif mode == SUCC:
        errs = []
        for rs in seqs.values():
            e = np.array([r.position_error for r in rs])
            if e[-1] > success_radius:
                continue
            first = int(np.argmax(e <= success_radius))
            errs.extend(e[first:].tolist())
        if not errs:
            raise NoSuccessesError("no sequence ends within the success radius")
    else:
        raise ValueError(f"unknown RMSE mode {mode!r}")
    return math.sqrt(float(np.mean(np.square(errs))))


@dataclass
class MetricReport:
    success: "OrderedDict[str, float]"
    rmse_succ: float | None
    rmse_all: float
    n_sequences: int
    n_records: int
    n_success: int
    thresholds: tuple = DEFAULT_THRESHOLDS
    curve: list[tuple[int, float]] = field(default_factory=list)

    def check(self) -> None:
        """Assert range and ordering invariants of the success rates."""
        by_angle: dict = {}
        for (radius, angle), sr in zip(self.thresholds, self.success.values()):
            if not 0.0 <= sr <= 1.0:
                raise AssertionError(f"success rate {sr} outside [0, 1]")
            by_angle.setdefault(angle, []).append((radius, sr))
        for pts in by_angle.values():
            pts.sort()
            for (_, a), (_, b) in zip(pts, pts[1:]):
                if b < a:
                    raise AssertionError("success rate decreases with radius")
        plain = dict(by_angle.get(None, []))
        for angle, pts in by_angle.items():
            if angle is None:
                continue
            for radius, sr in pts:
                if radius in plain and sr > plain[radius]:
                    raise AssertionError("angle constraint raised the success rate")

    def rows(self) -> list[tuple[str, str]]:
        out = [(k, f"{v:.6f}") for k, v in self.success.items()]
        out.append(("RMSE_succ", "nan" if self.rmse_succ is None else f"{self.rmse_succ:.6f}"))
        out.append(("RMSE_all", f"{self.rmse_all:.6f}"))
        out += [("sequences", str(self.n_sequences)), ("records", str(self.n_records)),
                ("successes", str(self.n_success))]
        return out

    def text(self) -> str:
        width = max(len(k) for k, _ in self.rows())
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in self.rows()) + "\n"


def success_curve(records: Sequence[LocalizationRecord], radius: float = 1.0) -> list[tuple[int, float]]:
    """Per-step success rate across sequences (steps a sequence lacks are skipped)."""
    table: dict[int, list[bool]] = {}
    for r in records:
        table.setdefault(r.step, []).append(r.position_error <= radius)
    return [(s, float(np.mean(v))) for s, v in sorted(table.items())]


def evaluate(
    records: Sequence[LocalizationRecord],
    thresholds: Sequence[tuple[float, float | None]] = DEFAULT_THRESHOLDS,
    success_radius: float = 1.0,
) -> MetricReport:
    if not records:
        raise EmptyRecordsError("no records")
    success = OrderedDict(
        (threshold_name(r, a), success_rate(records, r, a)) for r, a in thresholds
    )
    try:
        r_succ = rmse(records, SUCC, success_radius)
    except NoSuccessesError:
        r_succ = None
    finals = final_records(records)
    report = MetricReport(
        success=success,
        rmse_succ=r_succ,
        rmse_all=rmse(records, ALL),
        n_sequences=len(finals),
        n_records=len(records),
        n_success=sum(r.position_error <= success_radius for r in finals),
        thresholds=tuple(thresholds),
        curve=success_curve(records, success_radius),
    )
    report.check()
    return report
