"""
NMSE metric on rasters.
"""

import logging

import numpy as np

from .exceptions import DegenerateDenominatorError, EvaluationError

logger = logging.getLogger(__name__)

DENOMINATOR_PREDICTION = "prediction"
DENOMINATOR_TARGET = "target"


def nmse(target: np.ndarray, prediction: np.ndarray, denominator: str = DENOMINATOR_PREDICTION) -> float:
    """||target - prediction||^2 / ||D||^2 over every entry, in float64.

    Args:
        target (np.ndarray): Ground-truth raster M
        prediction (np.ndarray): Predicted raster M_hat
        denominator (str): "prediction" (D = M_hat) or "target" (D = M)

    Returns:
        float: Non-negative NMSE

    Raises:
        EvaluationError: If the shapes differ or the denominator is unknown
        DegenerateDenominatorError: If D is all zeros
    """
    target = np.asarray(target, dtype=np.float64)
    prediction = np.asarray(prediction, dtype=np.float64)
    if target.shape != prediction.shape:
        raise EvaluationError(f"NMSE shape mismatch: {target.shape} vs {prediction.shape}")
    if denominator == DENOMINATOR_PREDICTION:
        reference = prediction
    elif denominator == DENOMINATOR_TARGET:
        reference = target
    else:
        raise EvaluationError(f"Unknown NMSE denominator {denominator!r}")
    power = float(np.sum(reference * reference))
    if power == 0.0:
        error_msg = f"NMSE denominator ({denominator}) is all zeros"
        logger.error(error_msg)
        raise DegenerateDenominatorError(error_msg)
    diff = target - prediction
    return float(np.sum(diff * diff)) / power
