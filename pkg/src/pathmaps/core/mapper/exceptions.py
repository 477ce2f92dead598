"""
Mapper exceptions for pathmaps.

This module defines the errors raised by the mixture-of-experts mapper,
its frequency embedding and task registration.
"""

from ...exceptions import PathmapsError


class MapperError(PathmapsError):
    """Base exception for mapper errors."""
    code = "mapper-error"


class BadFrequencyError(MapperError):
    """Exception raised when a carrier frequency is not a positive finite number."""
    code = "bad-frequency"


class UnknownTaskError(MapperError):
    """Exception raised when a task has no gating network or decoder."""
    code = "unknown-task"


class DuplicateTaskError(MapperError):
    """Exception raised when registering a task name twice."""
    code = "duplicate-task"


class MissingPathEmbeddingError(MapperError):
    """Exception raised when a path index is given to a mapper without a path embedding table."""
    code = "missing-path-embedding"


class TokenShapeError(MapperError):
    """Exception raised when mapper inputs have unexpected dimensions."""
    code = "shape-mismatch"
