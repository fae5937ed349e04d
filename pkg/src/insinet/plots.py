"""Static charts for evaluation reports (matplotlib, Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .exceptions import InvalidInputError  # noqa: E402
from .geometry import BAND_NAMES  # noqa: E402

PLOT_KINDS = ("ring", "scale", "misregistration", "target_size", "ablation")
FACTORS = ("1", "2", "4", "8", "16")


class ReportError(InvalidInputError):
    """Report content cannot be plotted."""


def _need(report: dict, key: str):
    if not isinstance(report, dict) or not report.get(key):
        raise ReportError(f"report has no {key!r} data")
    return report[key]


def _ordered(scores: dict, keys) -> list[float]:
    missing = [k for k in keys if k not in scores]
    if missing:
        raise ReportError(f"report is missing {missing}")
    return [float(scores[k]) for k in keys]


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _ylabel(report: dict) -> str:
    return f"{report.get('metric', 'f1').upper()}"


def plot_ring(report: dict, path) -> Path:
    """Score per band position, outer to core."""
    values = _ordered(_need(report, "scores"), BAND_NAMES)
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(range(4), values, marker="o", color="tab:blue")
    ax.set_xticks(range(4), BAND_NAMES)
    ax.set_xlabel("detection region position")
    ax.set_ylabel(_ylabel(report))
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_scale(report: dict, path) -> Path:
    """Score per resolution degradation factor."""
    values = _ordered(_need(report, "scores"), FACTORS)
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(range(5), values, marker="s", color="tab:green")
    ax.set_xticks(range(5), [f"{f}x" for f in FACTORS])
    ax.set_xlabel("resolution factor")
    ax.set_ylabel(_ylabel(report))
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_misregistration(report: dict, path) -> Path:
    """Registered vs. unregistered scores per band, with the deltas as bars."""
    reg = _ordered(_need(report, "registered"), BAND_NAMES)
    unreg = _ordered(_need(report, "unregistered"), BAND_NAMES)
    delta = [u - r for u, r in zip(unreg, reg)]
    fig, (a, b) = plt.subplots(1, 2, figsize=(8, 3.2))
    a.plot(range(4), reg, marker="o", label="registered")
    a.plot(range(4), unreg, marker="o", label="unregistered")
    a.set_xticks(range(4), BAND_NAMES)
    a.set_ylabel(_ylabel(report))
    a.legend()
    b.bar(range(4), delta, color=["tab:red" if d < 0 else "tab:blue" for d in delta])
    b.axhline(0, color="k", lw=0.8)
    b.set_xticks(range(4), BAND_NAMES)
    b.set_ylabel("delta")
    return _save(fig, path)


def plot_target_size(report: dict, path) -> Path:
    """One score-vs-factor curve per target size class."""
    scores = _need(report, "scores")
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    plotted = 0
    for cls, per_factor in scores.items():
        if not per_factor:
            continue
        keys = [f for f in FACTORS if f in per_factor]
        ax.plot([FACTORS.index(k) for k in keys], [per_factor[k] for k in keys], marker="o", label=cls)
        plotted += 1
    if not plotted:
        plt.close(fig)
        raise ReportError("target-size report has no scores")
    ax.set_xticks(range(5), [f"{f}x" for f in FACTORS])
    ax.set_xlabel("resolution factor")
    ax.set_ylabel(_ylabel(report))
    ax.legend()
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_ablation(report: dict, path) -> Path:
    rows = _need(report, "rows")
    labels = [r["label"] for r in rows]
    f1 = [100 * (r.get("f1") or 0.0) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.bar(range(len(rows)), f1, color="tab:purple")
    ax.set_xticks(range(len(rows)), labels, rotation=20, ha="right")
    ax.set_ylabel("F1 (%)")
    return _save(fig, path)


PLOTTERS = {
    "ring": plot_ring,
    "scale": plot_scale,
    "misregistration": plot_misregistration,
    "target_size": plot_target_size,
    "ablation": plot_ablation,
}


def emit_plot(report: dict, path, kind: str | None = None) -> Path:
    """Draw ``report`` with the plotter for ``kind`` (default: the report's own kind)."""
    if not isinstance(report, dict) or not report:
        raise ReportError("empty report")
    kind = kind or report.get("kind")
    if kind not in PLOTTERS:
        raise ReportError(f"unknown report kind {kind!r}")
    if report.get("kind") not in (None, kind):
        raise ReportError(f"report kind {report.get('kind')!r} does not match {kind!r}")
    return PLOTTERS[kind](report, path)
