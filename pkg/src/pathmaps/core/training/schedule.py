"""
Training configuration, optimizers and learning-rate schedule.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, Iterable

import torch

from .exceptions import TrainingError

logger = logging.getLogger(__name__)

DENOMINATORS = ("prediction", "target")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings shared by both stages.

    Attributes:
        batch_size (int): Mini-batch size
        lr_stage1 (float): Adam learning rate for the tokenizers
        lr_stage2 (float): Adam learning rate for fusion and mapper
        lr_factor (float): Plateau reduction factor
        lr_patience (int): Non-improving epochs tolerated before a reduction
        min_lr (float): Learning-rate floor
        epochs (int): Training epochs
        seed (int): Seed for initialization, shuffling and splits
        dwa_temperature (float): DWA softmax temperature
        val_fraction (float): Share of snapshots held out for validation in stage 2
        freeze_stage1 (bool): Keep tokenizers frozen during stage 2
        gan_start_epoch (int): First (0-based) epoch with the adversarial term
        loss_denominator (str): NMSE denominator used by the stage-2 loss
    """
    batch_size: int = 64
    lr_stage1: float = 2e-4
    lr_stage2: float = 4.5e-4
    lr_factor: float = 0.5
    lr_patience: int = 10
    min_lr: float = 1e-6
    epochs: int = 500
    seed: int = 0
    dwa_temperature: float = 2.0
    val_fraction: float = 0.1
    freeze_stage1: bool = True
    gan_start_epoch: int = 0
    loss_denominator: str = "prediction"

    def __post_init__(self):
        if self.lr_stage1 <= 0 or self.lr_stage2 <= 0:
            raise TrainingError(f"Learning rates must be positive: {self.lr_stage1}, {self.lr_stage2}")
        if self.lr_patience < 1:
            raise TrainingError(f"lr_patience must be >= 1: {self.lr_patience}")
        if not 0 < self.lr_factor < 1:
            raise TrainingError(f"lr_factor must lie in (0, 1): {self.lr_factor}")
        if self.batch_size < 1 or self.epochs < 1:
            raise TrainingError(f"batch_size and epochs must be positive: {self.batch_size}, {self.epochs}")
        if self.dwa_temperature <= 0:
            raise TrainingError(f"dwa_temperature must be positive: {self.dwa_temperature}")
        if not 0 <= self.val_fraction < 1:
            raise TrainingError(f"val_fraction must lie in [0, 1): {self.val_fraction}")
        if self.loss_denominator not in DENOMINATORS:
            raise TrainingError(f"loss_denominator must be one of {DENOMINATORS}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def seeded_generator(seed: int) -> torch.Generator:
    """Seed torch's global RNG and return a dedicated generator with the same seed."""
    torch.manual_seed(seed)
    generator = torch.Generator()
    generator.manual_seed(seed)
    return generator


def make_optimizer(params: Iterable[torch.nn.Parameter], lr: float) -> torch.optim.Optimizer:
    params = [p for p in params if p.requires_grad]
    if not params:
        raise TrainingError("No trainable parameters")
    return torch.optim.Adam(params, lr=lr)


def make_scheduler(optimizer: torch.optim.Optimizer, cfg: TrainConfig) -> torch.optim.lr_scheduler.ReduceLROnPlateau:
    return torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer,
        mode="min",
        factor=cfg.lr_factor,
        patience=cfg.lr_patience,
        min_lr=cfg.min_lr,
    )


def current_lr(optimizer: torch.optim.Optimizer) -> float:
    return float(optimizer.param_groups[0]["lr"])
