"""
Stage-2 training: fusion module, MoE mapper and per-task heads.

The per-batch loss is the DWA-weighted sum of per-task NMSE between the
decoded maps and the ground truth. Learning rate follows the plateau rule on
the total validation NMSE.
"""

import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import torch

from ...storage import Checkpoint, CurvePoint, GateRecord, SnapshotDataset, snapshot_loader, write_gate_log
from ..model import PathMapModel
from .dwa import dwa_weights
from .exceptions import DivergedError, EmptySubsetError
from .objectives import nmse_loss
from .schedule import TrainConfig, current_lr, make_optimizer, make_scheduler, seeded_generator
from .state_management import TrainingState

logger = logging.getLogger(__name__)


@dataclass
class Stage2Result:
    """Outcome of a stage-2 (or fine-tuning) run.

    Attributes:
        model (PathMapModel): Trained model
        checkpoint (Checkpoint): Checkpoint of the last finished epoch
        curves (List[CurvePoint]): nmse/<task>, dwa/<task>, total, val and lr per epoch
        gate_records (List[GateRecord]): Gates of the final batch, if requested
    """
    model: PathMapModel
    checkpoint: Optional[Checkpoint] = None
    curves: List[CurvePoint] = field(default_factory=list)
    gate_records: List[GateRecord] = field(default_factory=list)

    def curve(self, component: str) -> List[float]:
        return [p.value for p in self.curves if p.component == component]


def validation_split(ids: Sequence[str], fraction: float) -> Tuple[List[str], List[str]]:
    """Split snapshot ids by a hash of the id into (train, validation)."""
    threshold = int(round(fraction * 1000))
    train, val = [], []
    for snapshot_id in ids:
        bucket = int(hashlib.sha256(snapshot_id.encode("utf-8")).hexdigest(), 16) % 1000
        (val if bucket < threshold else train).append(snapshot_id)
    return train, val


def model_dtype(model: torch.nn.Module) -> torch.dtype:
    return next(model.parameters()).dtype


def model_device(model: torch.nn.Module) -> torch.device:
    return next(model.parameters()).device


def batch_inputs(model: PathMapModel, batch: Dict[str, object]) -> Dict[str, object]:
    """Model keyword arguments of a collated batch, moved to the model device and dtype."""
    dtype, device = model_dtype(model), model_device(model)
    inputs = {"image": batch["image"].to(device=device, dtype=dtype),
              "frequency_hz": batch["frequency_hz"].to(device)}
    if model.mapper.path_table is not None:
        inputs["path_index"] = batch["path_index"].to(device)
    if "embedding" in batch:
        inputs["embedding"] = batch["embedding"].to(device=device, dtype=dtype)
    return inputs


def task_losses(model: PathMapModel, batch: Dict[str, object], tasks: Sequence[str],
                denominator: str = "prediction") -> Dict[str, torch.Tensor]:
    """Per-task differentiable NMSE of one collated batch; maps are stacked in dataset task order."""
    predictions = model(tasks=tasks, **batch_inputs(model, batch))
    targets = batch["maps"].to(device=model_device(model), dtype=model_dtype(model))
    return {task: nmse_loss(predictions[task], targets[:, i:i + 1], denominator) for i, task in enumerate(tasks)}


@torch.no_grad()
def evaluate_losses(model: PathMapModel, dataset: SnapshotDataset, tasks: Sequence[str], batch_size: int,
                    denominator: str = "prediction") -> Dict[str, float]:
    """Sample-weighted mean NMSE per task over a dataset."""
    totals = {task: 0.0 for task in tasks}
    count = 0
    for batch in snapshot_loader(dataset, batch_size, shuffle=False):
        n = len(batch["id"])
        for task, loss in task_losses(model, batch, tasks, denominator).items():
            totals[task] += float(loss) * n
        count += n
    return {task: value / max(count, 1) for task, value in totals.items()}


def fit(model: PathMapModel, train_set: SnapshotDataset, val_set: Optional[SnapshotDataset], cfg: TrainConfig,
        tasks: Sequence[str], state: TrainingState, stage: str = "stage2",
        gate_log_path: Optional[Union[str, Path]] = None) -> Stage2Result:
    """Optimize the currently trainable parameters of a model on train_set.

    Without a validation set the scheduler follows the training total.

    Raises:
        DivergedError: If a loss turns non-finite; carries the last good checkpoint
    """
    tasks = list(tasks)
    if train_set.tasks != tasks:
        train_set = SnapshotDataset(train_set.manifest, tasks, train_set.dtype, train_set.cache)
        if val_set is not None:
            val_set = SnapshotDataset(val_set.manifest, tasks, val_set.dtype, val_set.cache)
    seeded_generator(cfg.seed)
    optimizer = make_optimizer(model.parameters(), cfg.lr_stage2)
    scheduler = make_scheduler(optimizer, cfg)
    loader = snapshot_loader(train_set, cfg.batch_size, shuffle=True, seed=cfg.seed)
    if not state.history.tasks:
        state.history.tasks = list(tasks)
        state.history.values = {task: [] for task in tasks}

    result = Stage2Result(model=model)
    logger.info(f"{stage}: {len(train_set)} train / {len(val_set) if val_set else 0} val snapshots, "
                f"tasks {tasks}, trainable fraction {model.trainable_fraction():.3f}")
    for epoch in range(cfg.epochs):
        state.epoch = epoch + 1
        weights = dwa_weights(state.history, cfg.dwa_temperature)
        sums = {task: 0.0 for task in tasks}
        count = 0
        model.train()
        batch = None
        for batch in loader:
            losses = task_losses(model, batch, tasks, cfg.loss_denominator)
            total = sum(weights[task] * losses[task] for task in tasks)
            if not torch.isfinite(total):
                error_msg = f"{stage} loss diverged at epoch {epoch + 1}"
                logger.error(error_msg)
                state.add_activity(stage, "diverged", {"epoch": epoch + 1})
                raise DivergedError(error_msg, last_good=result.checkpoint)
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            n = len(batch["id"])
            for task in tasks:
                sums[task] += float(losses[task]) * n
            count += n
            logger.debug(f"{stage} epoch {epoch + 1}: batch total={float(total):.6f}")

        means = {task: sums[task] / count for task in tasks}
        state.history.record(means)
        model.eval()
        val_losses = evaluate_losses(model, val_set, tasks, cfg.batch_size, cfg.loss_denominator) if val_set else means
        val_total = sum(val_losses.values())
        if not math.isfinite(val_total):
            raise DivergedError(f"{stage} validation loss diverged at epoch {epoch + 1}", last_good=result.checkpoint)

        lr_before = current_lr(optimizer)
        scheduler.step(val_total)
        if current_lr(optimizer) < lr_before:
            state.add_activity(stage, "lr_reduced", {"lr": current_lr(optimizer)})
            logger.info(f"{stage}: learning rate reduced to {current_lr(optimizer):.2e}")

        for task in tasks:
            result.curves.append(CurvePoint(epoch + 1, f"nmse/{task}", means[task]))
            result.curves.append(CurvePoint(epoch + 1, f"dwa/{task}", weights[task]))
        result.curves.append(CurvePoint(epoch + 1, "total", sum(weights[t] * means[t] for t in tasks)))
        result.curves.append(CurvePoint(epoch + 1, "val", val_total))
        result.curves.append(CurvePoint(epoch + 1, "lr", lr_before))
        result.checkpoint = model.to_checkpoint({"epoch": epoch + 1, "seed": cfg.seed, "stage": stage})
        state.update_best(val_total)
        state.add_activity(stage, "epoch", {"val": val_total, **{f"nmse/{t}": means[t] for t in tasks}})
        logger.info(f"{stage} epoch {epoch + 1}/{cfg.epochs}: "
                    + " ".join(f"{t}={means[t]:.5f}(w={weights[t]:.3f})" for t in tasks)
                    + f" val={val_total:.5f} lr={lr_before:.2e}")

    if gate_log_path is not None and batch is not None:
        with torch.no_grad():
            model(tasks=tasks, **batch_inputs(model, batch))
        result.gate_records = model.mapper.gate_records(batch["frequency_hz"].to(model_device(model)))
        write_gate_log(gate_log_path, result.gate_records)
        logger.info(f"Wrote {len(result.gate_records)} gate records to {gate_log_path}")
    return result


def train_stage2(model: PathMapModel, dataset: SnapshotDataset, cfg: TrainConfig,
                 tasks: Optional[Sequence[str]] = None, state: Optional[TrainingState] = None,
                 gate_log_path: Optional[Union[str, Path]] = None) -> Stage2Result:
    """Train fusion, mapper and heads on top of trained stage-1 tokenizers.

    Args:
        model (PathMapModel): Model holding the stage-1 tokenizers
        dataset (SnapshotDataset): Snapshots carrying every requested task map
        cfg (TrainConfig): Optimization settings (lr_stage2, val_fraction, dwa_temperature, freeze_stage1)
        tasks (Optional[Sequence[str]]): Tasks to train, all model tasks by default
        state (Optional[TrainingState]): Training state holding the DWA loss history
        gate_log_path (Optional[Union[str, Path]]): Where to write the gate values of the final batch

    Returns:
        Stage2Result: Trained model, last checkpoint and curves

    Raises:
        EmptySubsetError: If the dataset has no snapshots
        DivergedError: If a loss turns non-finite
    """
    tasks = list(tasks or model.tasks)
    model.mapper._check_tasks(tasks)
    if len(dataset) == 0:
        raise EmptySubsetError("Stage-2 training needs at least one snapshot")
    state = state or TrainingState(tasks)

    ids = [entry.id for entry in dataset.entries]
    train_ids, val_ids = validation_split(ids, cfg.val_fraction)
    if not train_ids:
        logger.warning("Validation split took every snapshot; training on all of them")
        train_ids, val_ids = ids, []
    train_set = dataset.subset(train_ids)
    val_set = dataset.subset(val_ids) if val_ids else None

    model.mapper.set_trainable("full", train_decoders=not cfg.freeze_stage1)
    model.freeze_stage1(cfg.freeze_stage1)
    model.fusion.requires_grad_(True)
    state.add_activity("stage2", "start", {"tasks": tasks, "freeze_stage1": cfg.freeze_stage1})
    return fit(model, train_set, val_set, cfg, tasks, state, "stage2", gate_log_path)
