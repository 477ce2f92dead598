"""
Dynamic weight averaging of per-task losses.

Tasks whose loss fell least over the last two epochs get larger weights:
r_p = L_p(t-1) / L_p(t-2), w = P * softmax(r / T). Until two epochs are
recorded every weight is 1.
"""

import logging
from typing import Dict

import numpy as np
import torch

from .exceptions import TrainingError
from .state_management import LossHistory

logger = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 2.0


def dwa_weights(history: LossHistory, temperature: float = DEFAULT_TEMPERATURE) -> Dict[str, float]:
    """Loss weights for the next epoch.

    Args:
        history (LossHistory): Epoch-mean losses recorded so far
        temperature (float): Softmax temperature T

    Returns:
        Dict[str, float]: Positive weights summing to the number of tasks

    Raises:
        TrainingError: If the temperature is not positive
    """
    if temperature <= 0:
        raise TrainingError(f"DWA temperature must be positive: {temperature}")
    tasks = history.tasks
    if len(history) < 2:
        return {task: 1.0 for task in tasks}
    ratios = []
    for task in tasks:
        previous = history.last(task, 2)
        ratios.append(history.last(task, 1) / previous if previous != 0 else 1.0)
    weights = len(tasks) * torch.softmax(torch.tensor(ratios, dtype=torch.float64) / temperature, dim=0)
    out = {task: float(w) for task, w in zip(tasks, weights)}
    logger.debug(f"DWA ratios {np.round(ratios, 4).tolist()} -> weights {out}")
    return out
