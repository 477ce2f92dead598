"""
Plot emission. Every figure is written next to a CSV holding exactly the
plotted numbers.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from ...storage import CurvePoint, write_csv, write_curves  # noqa: E402
from .exceptions import EvaluationError  # noqa: E402
from .protocols import FewShotPoint, median_curve, topn_summary  # noqa: E402
from .report import EvalReport  # noqa: E402

logger = logging.getLogger(__name__)


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_report(report: EvalReport, out_dir: Path, name: str) -> List[Path]:
    """Bar chart of the per-dataset average NMSE."""
    datasets = report.datasets
    values = [report.dataset_average(d) for d in datasets]
    csv_path = write_csv(out_dir / f"nmse_{name}.csv", ("dataset", "nmse"), list(zip(datasets, values)))
    fig, ax = plt.subplots(figsize=(max(4, len(datasets) * 0.8), 4))
    ax.bar(range(len(datasets)), values, color="tab:blue")
    ax.set_xticks(range(len(datasets)))
    ax.set_xticklabels(datasets, rotation=45, ha="right")
    ax.set_ylabel("NMSE")
    ax.set_title(f"{name}: average NMSE {report.average:.4g}")
    ax.grid(True, axis="y", alpha=0.3)
    return [_save(fig, out_dir / f"nmse_{name}.png"), csv_path]


def plot_few_shot(points: Sequence[FewShotPoint], out_dir: Path) -> List[Path]:
    """Median NMSE versus fine-tuning sample count, one curve per method."""
    methods = sorted({p.method for p in points})
    rows = []
    fig, ax = plt.subplots(figsize=(6, 4))
    for method in methods:
        curve = median_curve(points, method)
        budgets, values = list(curve), list(curve.values())
        rows.extend((method, budget, value) for budget, value in curve.items())
        ax.plot(budgets, values, marker="o", linewidth=2, label=method)
    ax.set_xlabel("fine-tuning samples")
    ax.set_ylabel("median NMSE")
    ax.legend(loc="best")
    ax.grid(True, alpha=0.3)
    csv_path = write_csv(out_dir / "few_shot.csv", ("method", "sample_count", "nmse"), rows)
    return [_save(fig, out_dir / "few_shot.png"), csv_path]


def plot_topn(report: EvalReport, out_dir: Path) -> List[Path]:
    """Per-path NMSE bars with the all-path average as a horizontal line."""
    summary = topn_summary(report)
    average = summary.pop("average")
    paths, values = list(summary), list(summary.values())
    csv_path = write_csv(out_dir / "topn.csv", ("path_index", "nmse"), list(zip(paths, values)) + [("average", average)])
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(paths, values, color="tab:green")
    ax.axhline(average, color="tab:red", linestyle="--", label=f"average {average:.4g}")
    ax.set_xlabel("path index")
    ax.set_ylabel("NMSE")
    ax.legend(loc="best")
    return [_save(fig, out_dir / "topn.png"), csv_path]


def plot_curves(points: Sequence[CurvePoint], out_dir: Path, name: str) -> List[Path]:
    """One line per loss component against the epoch."""
    csv_path = write_curves(out_dir / f"curves_{name}.csv", points)
    fig, ax = plt.subplots(figsize=(7, 4))
    for component in sorted({p.component for p in points}):
        series = [p for p in points if p.component == component]
        ax.plot([p.epoch for p in series], [p.value for p in series], label=component)
    ax.set_xlabel("epoch")
    ax.set_yscale("symlog", linthresh=1e-6)
    ax.legend(loc="best", fontsize=7)
    ax.grid(True, alpha=0.3)
    return [_save(fig, out_dir / f"curves_{name}.png"), csv_path]


def emit_plots(reports: Dict[str, EvalReport], out_dir: Union[str, Path],
               few_shot: Sequence[FewShotPoint] = (), topn: Optional[EvalReport] = None,
               curves: Optional[Dict[str, Sequence[CurvePoint]]] = None) -> List[Path]:
    """Render every available figure with its sibling CSV.

    Args:
        reports (Dict[str, EvalReport]): Named reports, one bar chart each
        out_dir (Union[str, Path]): Output directory
        few_shot (Sequence[FewShotPoint]): Few-shot sweep results
        topn (Optional[EvalReport]): Multi-path report for the per-path chart
        curves (Optional[Dict[str, Sequence[CurvePoint]]]): Named loss curves

    Returns:
        List[Path]: Written files

    Raises:
        EvaluationError: If no report is given
    """
    if not reports:
        error_msg = "emit_plots needs at least one report"
        logger.error(error_msg)
        raise EvaluationError(error_msg)
    out_dir = Path(out_dir)
    written: List[Path] = []
    for name, report in reports.items():
        written.extend(plot_report(report, out_dir, name))
    if few_shot:
        written.extend(plot_few_shot(few_shot, out_dir))
    if topn is not None:
        written.extend(plot_topn(topn, out_dir))
    for name, points in (curves or {}).items():
        written.extend(plot_curves(list(points), out_dir, name))
    logger.info(f"Wrote {len(written)} plot files to {out_dir}")
    return written
