"""
State management for pathmaps training runs.

This module keeps the per-task loss history consumed by loss weighting and
a bounded log of recent training activities (epochs, checkpoints,
learning-rate changes).
"""

import logging
from collections import deque
from datetime import datetime
from typing import Any, Deque, Dict, List, Optional, Sequence

from .exceptions import TrainingStateError

logger = logging.getLogger(__name__)


class LossHistory:
    """Per-task sequences of epoch-mean losses."""

    def __init__(self, tasks: Sequence[str]):
        self.tasks = list(tasks)
        self.values: Dict[str, List[float]] = {task: [] for task in self.tasks}

    def record(self, losses: Dict[str, float]) -> None:
        """Append one epoch of losses; every task must be present.

        Raises:
            TrainingStateError: If a task is missing or a loss is negative
        """
        missing = [t for t in self.tasks if t not in losses]
        if missing:
            error_msg = f"Loss history update lacks tasks: {missing}"
            logger.error(error_msg)
            raise TrainingStateError(error_msg)
        for task in self.tasks:
            value = float(losses[task])
            if value < 0:
                raise TrainingStateError(f"Negative loss {value} for task {task}")
            self.values[task].append(value)

    def __len__(self) -> int:
        return len(self.values[self.tasks[0]]) if self.tasks else 0

    def last(self, task: str, back: int = 1) -> float:
        return self.values[task][-back]


class TrainingState:
    """Maintains the state of a training run."""

    def __init__(self, tasks: Sequence[str] = (), max_activities: int = 50):
        """Initialize training state.

        Args:
            tasks (Sequence[str], optional): Task names tracked in the loss history. Defaults to ().
            max_activities (int, optional): Maximum number of activities to store. Defaults to 50.
        """
        self.history = LossHistory(tasks)
        self.activities: Deque[Dict[str, Any]] = deque(maxlen=max_activities)
        self.epoch = 0
        self.best_loss: Optional[float] = None

    def add_activity(self, stage: str, action: str, details: Optional[Dict[str, Any]] = None) -> None:
        """Add a training activity to the state.

        Args:
            stage (str): Pipeline stage (e.g. "stage1", "stage2", "finetune")
            action (str): What happened (e.g. "epoch", "lr_reduced", "diverged")
            details (Optional[Dict[str, Any]], optional): Additional details. Defaults to None.
        """
        activity = {
            "timestamp": datetime.now(),
            "stage": stage,
            "action": action,
            "epoch": self.epoch,
        }
        if details:
            activity.update(details)
        self.activities.append(activity)

    def get_activities(self) -> List[Dict[str, Any]]:
        return list(self.activities)

    def update_best(self, loss: float) -> bool:
        """Track the best loss seen; returns True when loss improves on it."""
        if self.best_loss is None or loss < self.best_loss:
            self.best_loss = loss
            return True
        return False
