"""Front extraction, 2-D hypervolume, and cross-run comparison statistics.

Hypervolume follows the minimize-both convention: the quality axis is the
loss 1 - quality (so the reference 1.0 bounds it) and the time axis is in
milliseconds (reference 50000 ms). Points on or beyond the reference in
either coordinate contribute nothing.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass

from .evaluation import EvaluationRecord
from .nsga2 import RunArchive

METRICS_SCHEMA = "pareto-tuner/comparison/1"


@dataclass(frozen=True)
class HvPoint:
    """One outcome in minimization coordinates: (quality loss, time)."""

    quality_loss: float
    time_ms: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.quality_loss) and 0.0 <= self.quality_loss <= 1.0):
            raise ValueError(f"quality_loss must be in [0, 1], got {self.quality_loss}")
        if not (math.isfinite(self.time_ms) and self.time_ms >= 0):
            raise ValueError(f"time_ms must be finite and >= 0, got {self.time_ms}")


@dataclass(frozen=True)
class RefPoint:
    """Worst-corner reference bounding the hypervolume box."""

    quality_loss_ref: float = 1.0
    time_ref: float = 50000.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.quality_loss_ref) and self.quality_loss_ref > 0):
            raise ValueError("quality_loss_ref must be finite and > 0")
        if not (math.isfinite(self.time_ref) and self.time_ref > 0):
            raise ValueError("time_ref must be finite and > 0")


def pareto_front(records: list[EvaluationRecord]) -> list[EvaluationRecord]:
    """Mutually non-dominated subset, minimizing (1 - quality, time_ms).

    Exact duplicates keep the first occurrence; output preserves input
    order. O(n^2), fine at archive scale.
    """
    keys = [(1.0 - r.quality, r.time_ms) for r in records]
    out: list[EvaluationRecord] = []
    seen: set[tuple[float, float]] = set()
    for i, key in enumerate(keys):
        if key in seen:
            continue
        dominated = False
        for j, other in enumerate(keys):
            if j == i:
                continue
            if (other[0] <= key[0] and other[1] <= key[1]) and other != key:
                dominated = True
                break
        if not dominated:
            out.append(records[i])
            seen.add(key)
    return out


def hypervolume_2d(points: list[HvPoint], ref: RefPoint | None = None) -> float:
    """Exact dominated area between the point set and the reference corner.

    Sweeps the non-dominated in-box points by ascending quality_loss; each
    contributes a rectangle strip up to the next point's loss.
    """
    if ref is None:
        ref = RefPoint()
    inside = [
        (p.quality_loss, p.time_ms)
        for p in points
        if p.quality_loss < ref.quality_loss_ref and p.time_ms < ref.time_ref
    ]
    if not inside:
        return 0.0
    # Keep only the staircase: sort by loss, then by time; a point survives
    # iff its time is strictly below every earlier survivor's.
    inside.sort()
    front: list[tuple[float, float]] = []
    best_time = math.inf
    for loss, time_ms in inside:
        if time_ms < best_time:
            front.append((loss, time_ms))
            best_time = time_ms
    total = 0.0
    for i, (loss, time_ms) in enumerate(front):
        next_loss = front[i + 1][0] if i + 1 < len(front) else ref.quality_loss_ref
        total += (next_loss - loss) * (ref.time_ref - time_ms)
    return total


def run_stats(values: list[float]) -> dict[str, float]:
    """Mean/median/min/max plus IQR under linear-interpolation quantiles."""
    if not values:
        raise ValueError("run_stats requires at least one value")
    if len(values) == 1:
        q1 = q3 = float(values[0])
    else:
        q1, _q2, q3 = statistics.quantiles(values, n=4, method="inclusive")
    return {
        "n": float(len(values)),
        "mean": statistics.fmean(values),
        "median": statistics.median(values),
        "q1": q1,
        "q3": q3,
        "iqr": q3 - q1,
        "min": min(values),
        "max": max(values),
    }


def front_points(archive: RunArchive) -> list[HvPoint]:
    """The archive's final front in hypervolume coordinates."""
    return [
        HvPoint(quality_loss=1.0 - ind.objectives.quality, time_ms=ind.objectives.time_ms)
        for ind in archive.final_front
    ]


@dataclass(frozen=True)
class SideSummary:
    """Per-approach distributions over its runs' final fronts."""

    label: str
    n_runs: int
    best_times: tuple[float, ...]
    best_qualities: tuple[float, ...]
    hypervolumes: tuple[float, ...]
    best_time_stats: dict[str, float]
    best_quality_stats: dict[str, float]
    hypervolume_stats: dict[str, float]


@dataclass(frozen=True)
class ComparisonReport:
    """Two-sided comparison with the ratio forms used for headline claims.

    ``time_ratio_b_over_a`` > 1 means side A finds faster configurations;
    the quality and hypervolume ratios are A over B, so > 1 favors A. Each
    ratio is also exposed as a percentage change for the 'x% higher'
    phrasing.
    """

    ref: RefPoint
    side_a: SideSummary
    side_b: SideSummary
    time_ratio_b_over_a: float
    quality_ratio_a_over_b: float
    hv_ratio_a_over_b: float

    @property
    def hv_percent_increase(self) -> float:
        return (self.hv_ratio_a_over_b - 1.0) * 100.0

    @property
    def time_percent_increase_b(self) -> float:
        return (self.time_ratio_b_over_a - 1.0) * 100.0


def _ratio(numerator: float, denominator: float) -> float:
    if denominator == 0.0:
        return math.inf if numerator > 0 else 1.0 if numerator == 0 else -math.inf
    return numerator / denominator


def _summarize(archives: list[RunArchive], label: str, ref: RefPoint) -> SideSummary:
    best_times: list[float] = []
    best_qualities: list[float] = []
    hypervolumes: list[float] = []
    for i, archive in enumerate(archives):
        if not archive.final_front:
            raise ValueError(f"archive {i} of side {label!r} has an empty final front")
        best_times.append(min(ind.objectives.time_ms for ind in archive.final_front))
        best_qualities.append(max(ind.objectives.quality for ind in archive.final_front))
        hypervolumes.append(hypervolume_2d(front_points(archive), ref))
    return SideSummary(
        label=label,
        n_runs=len(archives),
        best_times=tuple(best_times),
        best_qualities=tuple(best_qualities),
        hypervolumes=tuple(hypervolumes),
        best_time_stats=run_stats(best_times),
        best_quality_stats=run_stats(best_qualities),
        hypervolume_stats=run_stats(hypervolumes),
    )


def compare_runs(
    a: list[RunArchive],
    b: list[RunArchive],
    ref: RefPoint | None = None,
    label_a: str = "a",
    label_b: str = "b",
) -> ComparisonReport:
    """Compare two sets of runs on best time, best quality, and hypervolume.

    All archives must agree on the reference point; an explicit ``ref``
    must match it too. Mixing conventions is a hard error because the
    hypervolumes would not be comparable.
    """
    if not a or not b:
        raise ValueError("compare_runs requires at least one archive per side")
    stored = {archive.ref_point for archive in a + b}
    if len(stored) > 1:
        raise ValueError(f"archives carry mismatched reference points: {sorted(stored)}")
    stored_ref = RefPoint(*next(iter(stored)))
    if ref is None:
        ref = stored_ref
    elif ref != stored_ref:
        raise ValueError(f"requested reference {ref} != archives' reference {stored_ref}")
    side_a = _summarize(a, label_a, ref)
    side_b = _summarize(b, label_b, ref)
    return ComparisonReport(
        ref=ref,
        side_a=side_a,
        side_b=side_b,
        time_ratio_b_over_a=_ratio(
            side_b.best_time_stats["mean"], side_a.best_time_stats["mean"]
        ),
        quality_ratio_a_over_b=_ratio(
            side_a.best_quality_stats["mean"], side_b.best_quality_stats["mean"]
        ),
        hv_ratio_a_over_b=_ratio(
            side_a.hypervolume_stats["mean"], side_b.hypervolume_stats["mean"]
        ),
    )
