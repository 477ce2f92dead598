"""
Semantic fusion exceptions for pathmaps.

This module defines the errors raised by semantic embedding providers and
the gated fusion of continuous embeddings into discrete token grids.
"""

from ...exceptions import PathmapsError


class FusionError(PathmapsError):
    """Base exception for semantic fusion errors."""
    code = "fusion-error"


class UnknownProviderError(FusionError):
    """Exception raised when a semantic provider id is not registered."""
    code = "unknown-provider"


class EmbeddingShapeError(FusionError):
    """Exception raised when an embedding or code grid has unexpected dimensions."""
    code = "embedding-shape"
