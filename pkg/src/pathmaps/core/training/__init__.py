"""
Training module for pathmaps.

This module provides the stage-1 tokenizer loop, the stage-2 mapper loop
with dynamic weight averaging, the optimization schedule and the
fine-tuning policies used by the generalization protocols.
"""

from .exceptions import (
    TrainingError,
    TrainingStateError,
    DivergedError,
    EmptySubsetError,
    SampleBudgetError
)
from .state_management import LossHistory, TrainingState
from .dwa import dwa_weights
from .schedule import (
    DENOMINATORS,
    TrainConfig,
    seeded_generator,
    make_optimizer,
    make_scheduler,
    current_lr
)
from .objectives import nmse_loss
from .stage1 import (
    IMAGE_SOURCE,
    Stage1Result,
    collect_rasters,
    tokenizer_checkpoint,
    tokenizer_from_checkpoint,
    train_stage1
)
from .stage2 import (
    Stage2Result,
    validation_split,
    model_dtype,
    model_device,
    batch_inputs,
    task_losses,
    evaluate_losses,
    fit,
    train_stage2
)
from .finetune import (
    FINETUNE_MODES,
    FinetunePolicy,
    FewShotRecord,
    FinetuneResult,
    take_subset,
    finetune
)

__all__ = [
    'TrainingError',
    'TrainingStateError',
    'DivergedError',
    'EmptySubsetError',
    'SampleBudgetError',
    'LossHistory',
    'TrainingState',
    'dwa_weights',
    'DENOMINATORS',
    'TrainConfig',
    'seeded_generator',
    'make_optimizer',
    'make_scheduler',
    'current_lr',
    'nmse_loss',
    'IMAGE_SOURCE',
    'Stage1Result',
    'collect_rasters',
    'tokenizer_checkpoint',
    'tokenizer_from_checkpoint',
    'train_stage1',
    'Stage2Result',
    'validation_split',
    'model_dtype',
    'model_device',
    'batch_inputs',
    'task_losses',
    'evaluate_losses',
    'fit',
    'train_stage2',
    'FINETUNE_MODES',
    'FinetunePolicy',
    'FewShotRecord',
    'FinetuneResult',
    'take_subset',
    'finetune'
]
