"""
Fine-tuning policies for generalization experiments.

A policy decides which parameter groups stay frozen; everything it freezes
is verified bit-identical after the run.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import torch

from ...storage import SnapshotDataset
from ..mapper import FREEZE_NONE, FREEZE_POLICIES
from ..model import PathMapModel
from .exceptions import EmptySubsetError, SampleBudgetError, TrainingError
from .schedule import TrainConfig
from .stage2 import Stage2Result, evaluate_losses, fit
from .state_management import TrainingState

logger = logging.getLogger(__name__)

FINETUNE_MODES = FREEZE_POLICIES


@dataclass(frozen=True)
class FinetunePolicy:
    """Which parameters a fine-tuning run may change.

    Attributes:
        mode (str): "full", "task_wise_only" or "new_task"
        sample_budget (int): Maximum number of fine-tuning snapshots
        new_tasks (tuple): Tasks added for this run; their parameters are always trainable
    """
    mode: str = FREEZE_NONE
    sample_budget: int = 500
    new_tasks: tuple = ()

    def __post_init__(self):
        if self.mode not in FINETUNE_MODES:
            raise TrainingError(f"Unknown fine-tuning mode {self.mode!r}; expected one of {FINETUNE_MODES}")
        if self.sample_budget < 1:
            raise TrainingError(f"sample_budget must be positive: {self.sample_budget}")

    def apply(self, model: PathMapModel) -> None:
        model.mapper.set_trainable(self.mode, new_tasks=self.new_tasks)
        model.image_tokenizer.requires_grad_(False)
        model.fusion.requires_grad_(self.mode == FREEZE_NONE)

    def frozen_scope(self, model: PathMapModel) -> List[str]:
        """Names of the parameters this policy freezes (after apply)."""
        return [name for name, param in model.named_parameters() if not param.requires_grad]


@dataclass
class FewShotRecord:
    """Evaluation NMSE of one task after fine-tuning on sample_count snapshots."""
    sample_count: int
    task: str
    nmse: float
    mode: str
    seed: int


@dataclass
class FinetuneResult:
    model: PathMapModel
    run: Stage2Result
    records: List[FewShotRecord] = field(default_factory=list)
    trainable_fraction: float = 0.0
    frozen: List[str] = field(default_factory=list)


def take_subset(dataset: SnapshotDataset, count: int, seed: int = 0) -> SnapshotDataset:
    """Draw count snapshots without replacement using a seeded permutation.

    Raises:
        EmptySubsetError: If count is not positive
        SampleBudgetError: If the dataset holds fewer snapshots than requested
    """
    if count < 1:
        raise EmptySubsetError(f"Cannot draw a subset of {count} snapshots")
    if count > len(dataset):
        raise SampleBudgetError(f"Requested {count} snapshots from a dataset of {len(dataset)}")
    generator = torch.Generator()
    generator.manual_seed(seed)
    order = torch.randperm(len(dataset), generator=generator)[:count].tolist()
    return dataset.subset([dataset.entries[i].id for i in sorted(order)])


def _snapshot(model: PathMapModel, names: Sequence[str]) -> Dict[str, torch.Tensor]:
    params = dict(model.named_parameters())
    return {name: params[name].detach().clone() for name in names}


def finetune(model: PathMapModel, subset: SnapshotDataset, policy: FinetunePolicy, cfg: TrainConfig,
             tasks: Optional[Sequence[str]] = None, eval_dataset: Optional[SnapshotDataset] = None,
             state: Optional[TrainingState] = None) -> FinetuneResult:
    """Fine-tune a trained model on a small subset under a freeze policy.

    Args:
        model (PathMapModel): Pretrained model, modified in place
        subset (SnapshotDataset): Fine-tuning snapshots
        policy (FinetunePolicy): Freeze mode and sample budget
        cfg (TrainConfig): Optimization settings
        tasks (Optional[Sequence[str]]): Tasks to fine-tune, all model tasks by default
        eval_dataset (Optional[SnapshotDataset]): Held-out snapshots for the NMSE-vs-samples records
        state (Optional[TrainingState]): Training state to update

    Returns:
        FinetuneResult: Model, run curves, few-shot records and trainable fraction

    Raises:
        EmptySubsetError: If the subset is empty
        SampleBudgetError: If the subset exceeds the sample budget
        TrainingError: If a frozen parameter changed during the run
    """
    if len(subset) == 0:
        raise EmptySubsetError("Fine-tuning subset is empty")
    if len(subset) > policy.sample_budget:
        error_msg = f"Fine-tuning subset has {len(subset)} snapshots, budget is {policy.sample_budget}"
        logger.error(error_msg)
        raise SampleBudgetError(error_msg)
    tasks = list(tasks or model.tasks)
    model.mapper._check_tasks(tasks)
    state = state or TrainingState(tasks)

    policy.apply(model)
    frozen = policy.frozen_scope(model)
    before = _snapshot(model, frozen)
    fraction = model.trainable_fraction()
    logger.info(f"Fine-tuning ({policy.mode}) on {len(subset)} snapshots; trainable fraction {fraction:.3f}")
    state.add_activity("finetune", "start", {"mode": policy.mode, "samples": len(subset)})

    run = fit(model, subset, None, cfg, tasks, state, "finetune")

    after = _snapshot(model, frozen)
    changed = [name for name in frozen if not torch.equal(before[name], after[name])]
    if changed:
        error_msg = f"Frozen parameters changed during fine-tuning: {changed[:5]}"
        logger.error(error_msg)
        raise TrainingError(error_msg)

    result = FinetuneResult(model=model, run=run, trainable_fraction=fraction, frozen=frozen)
    evaluation = eval_dataset if eval_dataset is not None else subset
    for task, value in evaluate_losses(model, evaluation, tasks, cfg.batch_size).items():
        result.records.append(FewShotRecord(len(subset), task, value, policy.mode, cfg.seed))
    return result
