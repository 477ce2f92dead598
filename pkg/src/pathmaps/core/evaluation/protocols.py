"""
Experiment protocols: data splits, zero-shot and few-shot generalization,
full retraining, top-N paths, new-parameter extension and scaling.
"""

import copy
import logging
from dataclasses import dataclass, replace
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ...storage import DatasetManifest, SnapshotDataset
from ..model import PathMapModel
from ..tokenizer import VQTokenizer
from ..training import (
    FinetunePolicy,
    TrainConfig,
    TrainingState,
    finetune,
    model_dtype,
    take_subset,
    train_stage2,
    validation_split
)
from .ablation import AblationFlags, ablated_model
from .exceptions import EmptySplitError, EvaluationError
from .report import EvalReport, run_eval

logger = logging.getLogger(__name__)

HOLDOUT_AXES = ("frequency", "altitude", "scenario", "dataset")
PRETRAINED = "pretrained+finetune"
SCRATCH = "scratch"


@dataclass(frozen=True)
class FewShotPoint:
    method: str
    sample_count: int
    seed: int
    nmse: float


@dataclass(frozen=True)
class ScalingPoint:
    preset: str
    n_train: int
    nmse: float


@dataclass
class AddParamResult:
    report: EvalReport
    trainable_fraction: float
    frozen: List[str]


def _by_ids(manifest: DatasetManifest, ids: Iterable[str], label: str) -> DatasetManifest:
    selected = manifest.select(ids=list(ids))
    if len(selected) == 0:
        error_msg = f"The {label} split is empty"
        logger.error(error_msg)
        raise EmptySplitError(error_msg)
    return selected


def in_distribution_split(manifest: DatasetManifest, test_fraction: float = 0.2) -> Tuple[DatasetManifest, DatasetManifest]:
    """Hash-based (train, test) split of the same conditions."""
    train_ids, test_ids = validation_split([s.id for s in manifest.snapshots], test_fraction)
    return _by_ids(manifest, train_ids, "train"), _by_ids(manifest, test_ids, "test")


def holdout_split(manifest: DatasetManifest, axis: str,
                  values: Sequence) -> Tuple[DatasetManifest, DatasetManifest]:
    """Hold out every snapshot whose frequency, altitude, scenario or dataset tag is in values.

    Returns:
        Tuple[DatasetManifest, DatasetManifest]: (source conditions, held-out conditions)
    """
    if axis not in HOLDOUT_AXES:
        raise EvaluationError(f"Unknown hold-out axis {axis!r}; expected one of {HOLDOUT_AXES}")
    if axis in ("frequency", "altitude"):
        wanted = {float(v) for v in values}
        key = (lambda s: float(s.frequency_hz)) if axis == "frequency" else (lambda s: float(s.altitude_m))
    else:
        wanted = {str(v) for v in values}
        key = (lambda s: s.scenario) if axis == "scenario" else (lambda s: s.dataset_tag)
    held = [s.id for s in manifest.snapshots if key(s) in wanted]
    kept = [s.id for s in manifest.snapshots if key(s) not in wanted]
    logger.info(f"Hold-out on {axis}={list(values)}: {len(kept)} source / {len(held)} target snapshots")
    return _by_ids(manifest, kept, "source"), _by_ids(manifest, held, "held-out")


def zero_shot(model: PathMapModel, target: DatasetManifest, tasks: Optional[Sequence[str]] = None,
              seed: int = 0, checkpoint: str = "") -> EvalReport:
    """Evaluate a pretrained model on unseen conditions without any update."""
    report = run_eval(model, target, tasks, seed=seed, checkpoint=checkpoint)
    report.metadata["protocol"] = "zero-shot"
    return report


def _train_from_scratch(base: PathMapModel, subset: SnapshotDataset, cfg: TrainConfig,
                        tasks: Sequence[str]) -> PathMapModel:
    model = ablated_model(base, AblationFlags(), cfg.seed)
    train_stage2(model, subset, replace(cfg, val_fraction=0.0), tasks, TrainingState(tasks))
    return model


def few_shot_sweep(pretrained: PathMapModel, pool: DatasetManifest, target: DatasetManifest,
                   budgets: Sequence[int], seeds: Sequence[int], cfg: TrainConfig, mode: str = "full",
                   tasks: Optional[Sequence[str]] = None, with_scratch: bool = True) -> List[FewShotPoint]:
    """Fine-tune copies of a pretrained model on growing subsets of the target pool.

    For each (seed, budget) the same subset also trains a fresh stage-2 model
    from scratch, giving the reference curve.

    Returns:
        List[FewShotPoint]: Average target NMSE per method, budget and seed
    """
    tasks = list(tasks or pretrained.tasks)
    dataset = SnapshotDataset(pool, tasks, dtype=model_dtype(pretrained))
    points = []
    for seed in seeds:
        run_cfg = replace(cfg, seed=seed)
        for budget in budgets:
            subset = take_subset(dataset, budget, seed)
            model = copy.deepcopy(pretrained)
            finetune(model, subset, FinetunePolicy(mode, budget), run_cfg, tasks)
            tuned = run_eval(model, target, tasks, seed=seed).average
            points.append(FewShotPoint(PRETRAINED, budget, seed, tuned))
            if with_scratch:
                scratch = run_eval(_train_from_scratch(pretrained, subset, run_cfg, tasks), target, tasks, seed=seed)
                points.append(FewShotPoint(SCRATCH, budget, seed, scratch.average))
            logger.info(f"Few-shot seed {seed} budget {budget}: fine-tuned NMSE {tuned:.6f}")
    return points


def median_curve(points: Sequence[FewShotPoint], method: str) -> Dict[int, float]:
    """Median NMSE over seeds per sample budget."""
    by_budget: Dict[int, List[float]] = {}
    for point in points:
        if point.method == method:
            by_budget.setdefault(point.sample_count, []).append(point.nmse)
    return {budget: float(np.median(values)) for budget, values in sorted(by_budget.items())}


def full_retrain(base: PathMapModel, train: DatasetManifest, target: DatasetManifest, cfg: TrainConfig,
                 tasks: Optional[Sequence[str]] = None) -> EvalReport:
    """Reference: train a fresh stage-2 model on the full target training set."""
    tasks = list(tasks or base.tasks)
    model = ablated_model(base, AblationFlags(), cfg.seed)
    train_stage2(model, SnapshotDataset(train, tasks, dtype=model_dtype(model)), cfg, tasks, TrainingState(tasks))
    report = run_eval(model, target, tasks, seed=cfg.seed)
    report.metadata["protocol"] = "full-retrain"
    return report


def topn_report(model: PathMapModel, manifest: DatasetManifest, n: int,
                tasks: Optional[Sequence[str]] = None, seed: int = 0, checkpoint: str = "") -> EvalReport:
    """Evaluate path indices 1..n separately.

    Raises:
        EvaluationError: If n < 1
    """
    if n < 1:
        raise EvaluationError(f"Top-N needs n >= 1, got {n}")
    report = run_eval(model, manifest.select(path_indices=range(1, n + 1)), tasks, seed=seed, checkpoint=checkpoint)
    report.metadata["protocol"] = f"top-{n}"
    return report


def topn_summary(report: EvalReport) -> Dict[str, float]:
    """Per-path NMSE (keys "1".."N") plus the all-path "average"."""
    summary = {str(p): report.path_average(p) for p in report.path_indices}
    summary["average"] = float(sum(summary.values()) / len(summary))
    return summary


def add_param(model: PathMapModel, name: str, train: DatasetManifest, target: DatasetManifest, cfg: TrainConfig,
              decoder: Optional[VQTokenizer] = None, mode: str = "task_wise_only",
              sample_budget: Optional[int] = None) -> AddParamResult:
    """Extend a trained model with a new map parameter and train only what the mode allows."""
    model.mapper.add_task(name, decoder, freeze_policy=mode)
    subset = SnapshotDataset(train, [name], dtype=model_dtype(model))
    if sample_budget is not None and sample_budget < len(subset):
        subset = take_subset(subset, sample_budget, cfg.seed)
    policy = FinetunePolicy(mode, len(subset), new_tasks=(name,))
    result = finetune(model, subset, policy, cfg, tasks=[name])
    report = run_eval(model, target, [name], seed=cfg.seed)
    report.metadata["protocol"] = f"add-param:{mode}"
    logger.info(f"Added {name} ({mode}): trainable fraction {result.trainable_fraction:.3f}, "
                f"NMSE {report.average:.6f}")
    return AddParamResult(report, result.trainable_fraction, result.frozen)


def scaling_sweep(builders: Dict[str, Callable[[], PathMapModel]], train: DatasetManifest, target: DatasetManifest,
                  sizes: Sequence[int], cfg: TrainConfig, tasks: Optional[Sequence[str]] = None) -> List[ScalingPoint]:
    """Train every model preset on growing pre-training subsets and score each on the target split."""
    points = []
    for preset, build in builders.items():
        for size in sizes:
            model = build()
            run_tasks = list(tasks or model.tasks)
            dataset = SnapshotDataset(train, run_tasks, dtype=model_dtype(model))
            subset = take_subset(dataset, size, cfg.seed)
            train_stage2(model, subset, replace(cfg, val_fraction=0.0), run_tasks, TrainingState(run_tasks))
            points.append(ScalingPoint(preset, size, run_eval(model, target, run_tasks, seed=cfg.seed).average))
            logger.info(f"Scaling {preset} with {size} snapshots: NMSE {points[-1].nmse:.6f}")
    return points
