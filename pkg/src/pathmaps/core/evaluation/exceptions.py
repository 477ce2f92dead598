"""
Evaluation exceptions for pathmaps.

This module defines the errors raised by the NMSE metric, report assembly,
ablation variants and the experiment protocols.
"""

from ...exceptions import PathmapsError


class EvaluationError(PathmapsError):
    """Base exception for evaluation errors."""
    code = "evaluation-error"


class DegenerateDenominatorError(EvaluationError):
    """Exception raised when the NMSE denominator raster is all zeros."""
    code = "degenerate-denominator"


class EmptySplitError(EvaluationError):
    """Exception raised when an evaluation split has no snapshots."""
    code = "empty-split"


class TaskMismatchError(EvaluationError):
    """Exception raised when requested tasks are missing from a checkpoint or manifest."""
    code = "task-mismatch"


class ContradictoryFlagsError(EvaluationError):
    """Exception raised when an ablation variant sets more than one flag."""
    code = "contradictory-flags"
