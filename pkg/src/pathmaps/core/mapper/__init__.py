"""
Mixture-of-experts mapper module for pathmaps.

This module provides the frequency embedding, the token-wise and task-wise
MoE layers and the segmented transformer stack that turns fused image
tokens into per-parameter multipath maps.
"""

from .exceptions import (
    MapperError,
    BadFrequencyError,
    UnknownTaskError,
    DuplicateTaskError,
    MissingPathEmbeddingError,
    TokenShapeError
)
from .moe import (
    TOKEN_WISE,
    TASK_WISE,
    MoELayerConfig,
    FrequencyEmbedding,
    TokenMoE,
    TaskMoE,
    make_expert,
    normalized_log_frequency,
    top_k_mask
)
from .stack import (
    DEFAULT_TASKS,
    FREEZE_NONE,
    FREEZE_TASK_WISE,
    FREEZE_NEW_TASK,
    FREEZE_POLICIES,
    MapperConfig,
    MapperBlock,
    MapperStack,
    parameter_scope,
    trainable_fraction
)

__all__ = [
    'MapperError',
    'BadFrequencyError',
    'UnknownTaskError',
    'DuplicateTaskError',
    'MissingPathEmbeddingError',
    'TokenShapeError',
    'TOKEN_WISE',
    'TASK_WISE',
    'MoELayerConfig',
    'FrequencyEmbedding',
    'TokenMoE',
    'TaskMoE',
    'make_expert',
    'normalized_log_frequency',
    'top_k_mask',
    'DEFAULT_TASKS',
    'FREEZE_NONE',
    'FREEZE_TASK_WISE',
    'FREEZE_NEW_TASK',
    'FREEZE_POLICIES',
    'MapperConfig',
    'MapperBlock',
    'MapperStack',
    'parameter_scope',
    'trainable_fraction'
]
