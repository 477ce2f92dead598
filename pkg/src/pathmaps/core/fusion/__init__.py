"""
Semantic fusion module for pathmaps.

This module provides the semantic embedding providers and the gated fusion
that conditions discrete image tokens on a continuous embedding.
"""

from .exceptions import (
    FusionError,
    UnknownProviderError,
    EmbeddingShapeError
)
from .providers import (
    DEFAULT_PROVIDER,
    ContinuousEmbedding,
    FrozenViTProvider,
    register_provider,
    available_providers,
    get_provider,
    embed_semantic,
    numpy_embedder
)
from .gated import (
    FusionConfig,
    SemanticFusion,
    fuse
)

__all__ = [
    'FusionError',
    'UnknownProviderError',
    'EmbeddingShapeError',
    'DEFAULT_PROVIDER',
    'ContinuousEmbedding',
    'FrozenViTProvider',
    'register_provider',
    'available_providers',
    'get_provider',
    'embed_semantic',
    'numpy_embedder',
    'FusionConfig',
    'SemanticFusion',
    'fuse'
]
