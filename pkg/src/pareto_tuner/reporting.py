"""Render comparison and importance results as tables, text, and bar charts.

Every emitted file starts with a schema-version header line so downstream
tooling can detect format drift. Tables are tab-separated with a column
header row; charts are plain text.
"""

from __future__ import annotations

from pathlib import Path

from .importance import IMPORTANCE_SCHEMA, ImportanceReport
from .metrics import METRICS_SCHEMA, ComparisonReport, SideSummary

_STAT_COLUMNS = ("n", "mean", "median", "q1", "q3", "iqr", "min", "max")
_BAR_WIDTH = 40


def _fmt(value: float) -> str:
    return f"{value:.6g}"


def comparison_table(report: ComparisonReport) -> str:
    lines = [f"# {METRICS_SCHEMA}", "metric\tside\t" + "\t".join(_STAT_COLUMNS)]
    for metric, pick in (
        ("best_time_ms", lambda s: s.best_time_stats),
        ("best_quality", lambda s: s.best_quality_stats),
        ("hypervolume", lambda s: s.hypervolume_stats),
    ):
        for side in (report.side_a, report.side_b):
            stats = pick(side)
            lines.append(
                f"{metric}\t{side.label}\t" + "\t".join(_fmt(stats[c]) for c in _STAT_COLUMNS)
            )
    return "\n".join(lines) + "\n"


def _side_block(side: SideSummary) -> list[str]:
    return [
        f"Side {side.label} ({side.n_runs} runs):",
        f"  best time ms    mean {_fmt(side.best_time_stats['mean'])}"
        f"  median {_fmt(side.best_time_stats['median'])}"
        f"  iqr {_fmt(side.best_time_stats['iqr'])}",
        f"  best quality    mean {_fmt(side.best_quality_stats['mean'])}"
        f"  median {_fmt(side.best_quality_stats['median'])}"
        f"  iqr {_fmt(side.best_quality_stats['iqr'])}",
        f"  hypervolume     mean {_fmt(side.hypervolume_stats['mean'])}"
        f"  median {_fmt(side.hypervolume_stats['median'])}"
        f"  iqr {_fmt(side.hypervolume_stats['iqr'])}",
    ]


def comparison_summary(report: ComparisonReport) -> str:
    """Human-readable outcome with both ratio phrasings."""
    a, b = report.side_a, report.side_b
    lines = [
        f"# {METRICS_SCHEMA}",
        f"Reference point: quality_loss {_fmt(report.ref.quality_loss_ref)}, "
        f"time {_fmt(report.ref.time_ref)} ms",
    ]
    lines.extend(_side_block(a))
    lines.extend(_side_block(b))
    lines.append(
        f"Mean best time: {b.label} is {_fmt(report.time_ratio_b_over_a)}x {a.label}'s "
        f"({_fmt(report.time_percent_increase_b)}% higher)"
    )
    lines.append(
        f"Mean best quality: {a.label}/{b.label} ratio {_fmt(report.quality_ratio_a_over_b)}"
    )
    lines.append(
        f"Mean hypervolume: {a.label}/{b.label} ratio {_fmt(report.hv_ratio_a_over_b)} "
        f"({_fmt(report.hv_percent_increase)}% higher)"
    )
    return "\n".join(lines) + "\n"


def write_comparison(report: ComparisonReport, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "table": out / "comparison.tsv",
        "summary": out / "comparison.txt",
    }
    paths["table"].write_text(comparison_table(report), encoding="utf-8")
    paths["summary"].write_text(comparison_summary(report), encoding="utf-8")
    return paths


def importance_table(report: ImportanceReport) -> str:
    lines = [f"# {IMPORTANCE_SCHEMA}", "feature\tmean_mdi\tspread"]
    order = sorted(range(len(report.feature_names)), key=lambda i: -report.mean[i])
    for i in order:
        lines.append(f"{report.feature_names[i]}\t{_fmt(report.mean[i])}\t{_fmt(report.spread[i])}")
    return "\n".join(lines) + "\n"


def importance_group_table(report: ImportanceReport) -> str:
    lines = [f"# {IMPORTANCE_SCHEMA}", "group\tmean_mdi\tspread"]
    order = sorted(range(len(report.group_names)), key=lambda i: -report.group_mean[i])
    for i in order:
        lines.append(
            f"{report.group_names[i]}\t{_fmt(report.group_mean[i])}\t{_fmt(report.group_spread[i])}"
        )
    return "\n".join(lines) + "\n"


def _bars(names: list[str], values: list[float]) -> list[str]:
    top = max(values) if values else 0.0
    width = max((len(n) for n in names), default=0)
    lines = []
    for name, value in zip(names, values):
        filled = 0 if top <= 0 else round(_BAR_WIDTH * value / top)
        lines.append(f"{name.ljust(width)} | {'#' * filled:<{_BAR_WIDTH}} {value:.3f}")
    return lines


def importance_chart(report: ImportanceReport) -> str:
    """Grouped then per-feature textual bar chart, largest first."""
    lines = [f"# {IMPORTANCE_SCHEMA}", f"MDI importance, target = {report.target}", "", "By group:"]
    group_order = sorted(range(len(report.group_names)), key=lambda i: -report.group_mean[i])
    lines.extend(
        _bars(
            [report.group_names[i] for i in group_order],
            [float(report.group_mean[i]) for i in group_order],
        )
    )
    lines.extend(["", "By feature:"])
    order = sorted(range(len(report.feature_names)), key=lambda i: -report.mean[i])
    lines.extend(
        _bars(
            [report.feature_names[i] for i in order],
            [float(report.mean[i]) for i in order],
        )
    )
    if any(report.uniform_fallbacks):
        count = sum(report.uniform_fallbacks)
        lines.extend(["", f"warning: {count} repeat(s) had no informative splits (uniform fallback)"])
    return "\n".join(lines) + "\n"


def write_importance(report: ImportanceReport, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prefix = f"importance-{report.target}"
    paths = {
        "table": out / f"{prefix}.tsv",
        "groups": out / f"{prefix}-groups.tsv",
        "chart": out / f"{prefix}-chart.txt",
    }
    paths["table"].write_text(importance_table(report), encoding="utf-8")
    paths["groups"].write_text(importance_group_table(report), encoding="utf-8")
    paths["chart"].write_text(importance_chart(report), encoding="utf-8")
    return paths
