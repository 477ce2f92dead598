"""
Evaluation reports: per-dataset, per-task, per-path NMSE tables.

Averages are taken over tasks within each dataset, then over datasets.
"""

import csv
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from ...storage import DatasetManifest, SchemaError, SnapshotDataset, atomic_write_bytes, snapshot_loader, write_csv
from ..model import PathMapModel
from ..training import batch_inputs, model_dtype
from .exceptions import EmptySplitError, EvaluationError, TaskMismatchError
from .metrics import DENOMINATOR_PREDICTION, nmse

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ("dataset", "task", "path_index", "nmse", "denominator", "seed", "checkpoint")
AVERAGING = "tasks-then-datasets"


@dataclass(frozen=True)
class EvalRow:
    dataset: str
    task: str
    path_index: int
    nmse: float


@dataclass
class EvalReport:
    """NMSE per (dataset, task, path_index) with aggregate averages.

    Attributes:
        rows (List[EvalRow]): Rows sorted by dataset, task and path index
        metadata (Dict[str, Any]): checkpoint, seed, denominator and averaging convention
    """
    rows: List[EvalRow] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: (r.dataset, r.task, r.path_index))
        self.metadata.setdefault("averaging", AVERAGING)

    @property
    def datasets(self) -> List[str]:
        return sorted({r.dataset for r in self.rows})

    @property
    def tasks(self) -> List[str]:
        return sorted({r.task for r in self.rows})

    @property
    def path_indices(self) -> List[int]:
        return sorted({r.path_index for r in self.rows})

    def value(self, dataset: str, task: str, path_index: Optional[int] = None) -> float:
        """Mean NMSE of one (dataset, task), optionally restricted to one path index."""
        values = [r.nmse for r in self.rows if r.dataset == dataset and r.task == task
                  and (path_index is None or r.path_index == path_index)]
        if not values:
            raise EvaluationError(f"No row for dataset={dataset} task={task} path_index={path_index}")
        return float(np.mean(values))

    def dataset_average(self, dataset: str) -> float:
        return float(np.mean([self.value(dataset, task) for task in self.tasks
                              if any(r.dataset == dataset and r.task == task for r in self.rows)]))

    def task_average(self, task: str) -> float:
        return float(np.mean([self.value(d, task) for d in self.datasets
                              if any(r.dataset == d and r.task == task for r in self.rows)]))

    def path_average(self, path_index: int) -> float:
        return float(np.mean([r.nmse for r in self.rows if r.path_index == path_index]))

    @property
    def average(self) -> float:
        if not self.rows:
            raise EvaluationError("Report has no rows")
        return float(np.mean([self.dataset_average(d) for d in self.datasets]))

    def csv_rows(self) -> List[Tuple]:
        meta = self.metadata
        return [(r.dataset, r.task, r.path_index, r.nmse, meta.get("denominator", DENOMINATOR_PREDICTION),
                 meta.get("seed", 0), meta.get("checkpoint", "")) for r in self.rows]

    def render_table(self) -> str:
        """Fixed-width table: one row per dataset, one column per task, then the averages."""
        tasks = self.tasks
        width = max([len("Average")] + [len(d) for d in self.datasets]) + 2
        header = "dataset".ljust(width) + "".join(t.rjust(12) for t in tasks) + "average".rjust(12)
        lines = [header, "-" * len(header)]
        for dataset in self.datasets:
            cells = []
            for task in tasks:
                present = any(r.dataset == dataset and r.task == task for r in self.rows)
                cells.append(f"{self.value(dataset, task):12.6f}" if present else "-".rjust(12))
            lines.append(dataset.ljust(width) + "".join(cells) + f"{self.dataset_average(dataset):12.6f}")
        lines.append("-" * len(header))
        lines.append("Average".ljust(width) + "".join(f"{self.task_average(t):12.6f}" for t in tasks)
                     + f"{self.average:12.6f}")
        meta = ", ".join(f"{k}={v}" for k, v in sorted(self.metadata.items()))
        lines.append(f"# {meta}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: Union[str, Path], name: str = "report") -> Tuple[Path, Path]:
        """Write <name>.csv and the rendered <name>.txt."""
        out_dir = Path(out_dir)
        csv_path = write_csv(out_dir / f"{name}.csv", REPORT_COLUMNS, self.csv_rows())
        txt_path = atomic_write_bytes(out_dir / f"{name}.txt", self.render_table().encode("utf-8"))
        logger.info(f"Wrote report {csv_path} ({len(self.rows)} rows, average NMSE {self.average:.6f})")
        return csv_path, txt_path


def read_report(path: Union[str, Path]) -> EvalReport:
    """Read a report CSV written by EvalReport.write.

    Raises:
        SchemaError: If the header or a row is malformed
    """
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8", newline="") as handle:
            reader = csv.reader(handle)
            header = tuple(next(reader, ()))
            if header != REPORT_COLUMNS:
                raise SchemaError(f"{path}: expected columns {REPORT_COLUMNS}, got {header}")
            rows, metadata = [], {}
            for line in reader:
                dataset, task, path_index, value, denominator, seed, checkpoint = line
                rows.append(EvalRow(dataset, task, int(path_index), float(value)))
                metadata = {"denominator": denominator, "seed": int(seed), "checkpoint": checkpoint}
    except (OSError, ValueError) as e:
        error_msg = f"Cannot read report {path}: {e}"
        logger.error(error_msg)
        raise SchemaError(error_msg)
    return EvalReport(rows, metadata)


def _check_tasks(model: PathMapModel, manifest: DatasetManifest, tasks: Sequence[str]) -> None:
    missing_model = [t for t in tasks if t not in model.tasks]
    missing_data = [t for t in tasks if t not in manifest.params()]
    if missing_model or missing_data:
        error_msg = f"Task mismatch: not in checkpoint {missing_model}, not in manifest {missing_data}"
        logger.error(error_msg)
        raise TaskMismatchError(error_msg)


@torch.no_grad()
def run_eval(model: PathMapModel, manifest: DatasetManifest, tasks: Optional[Sequence[str]] = None,
             denominator: str = DENOMINATOR_PREDICTION, checkpoint: str = "", seed: int = 0,
             batch_size: int = 16, snap_codes: bool = False) -> EvalReport:
    """Evaluate a model on every snapshot of a manifest.

    Args:
        model (PathMapModel): Trained model
        manifest (DatasetManifest): Evaluation split
        tasks (Optional[Sequence[str]]): Tasks to score, all model tasks by default
        denominator (str): NMSE denominator convention
        checkpoint (str): Checkpoint id recorded in the metadata
        seed (int): Seed recorded in the metadata
        batch_size (int): Inference batch size
        snap_codes (bool): Snap projected tokens to the map codebook before decoding

    Returns:
        EvalReport: Mean per-snapshot NMSE per (dataset, task, path_index)

    Raises:
        EmptySplitError: If the manifest is empty
        TaskMismatchError: If a task is missing from the model or the manifest
    """
    if len(manifest) == 0:
        error_msg = "Evaluation split has no snapshots"
        logger.error(error_msg)
        raise EmptySplitError(error_msg)
    tasks = list(tasks or model.tasks)
    _check_tasks(model, manifest, tasks)

    model.eval()
    dataset = SnapshotDataset(manifest, tasks, dtype=model_dtype(model))
    groups: Dict[Tuple[str, str, int], List[float]] = defaultdict(list)
    for batch in snapshot_loader(dataset, batch_size, shuffle=False):
        predictions = model(tasks=tasks, snap_codes=snap_codes, **batch_inputs(model, batch))
        targets = batch["maps"].numpy()
        for i, task in enumerate(tasks):
            predicted = predictions[task][:, 0].detach().cpu().numpy()
            for b, dataset_tag in enumerate(batch["dataset"]):
                path_index = int(batch["path_index"][b])
                groups[(dataset_tag, task, path_index)].append(nmse(targets[b, i], predicted[b], denominator))

    rows = [EvalRow(d, t, p, float(np.mean(values))) for (d, t, p), values in groups.items()]
    metadata = {"checkpoint": checkpoint, "seed": seed, "denominator": denominator}
    if snap_codes:
        metadata["snap_codes"] = True
    report = EvalReport(rows, metadata)
    logger.info(f"Evaluated {len(manifest)} snapshots over {len(report.datasets)} datasets: "
                f"average NMSE {report.average:.6f}")
    return report
