"""
Training exceptions for pathmaps.

This module defines the errors raised by the stage-1 and stage-2 training
loops, loss weighting and fine-tuning.
"""

from typing import Optional

from ...exceptions import PathmapsError


class TrainingError(PathmapsError):
    """Base exception for training errors."""
    code = "training-error"


class TrainingStateError(TrainingError):
    """Exception raised when the training state cannot be updated."""
    code = "training-state"


class DivergedError(TrainingError):
    """Exception raised when a training loss becomes NaN or infinite.

    Attributes:
        last_good: Checkpoint of the last epoch that finished with finite losses, if any
    """
    code = "diverged"

    def __init__(self, message: str = "", last_good: Optional[object] = None):
        super().__init__(message)
        self.last_good = last_good


class EmptySubsetError(TrainingError):
    """Exception raised when a training or fine-tuning subset has no snapshots."""
    code = "empty-subset"


class SampleBudgetError(TrainingError):
    """Exception raised when a fine-tuning subset exceeds its sample budget."""
    code = "sample-budget"
