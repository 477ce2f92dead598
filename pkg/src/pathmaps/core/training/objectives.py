"""
Differentiable stage-2 objective.
"""

import torch

NMSE_EPS = 1e-12


def nmse_loss(prediction: torch.Tensor, target: torch.Tensor, denominator: str = "prediction") -> torch.Tensor:
    """Mean over samples of ||target - prediction||^2 / ||D||^2 for (B, ...) batches.

    D is the prediction or the target, per ``denominator``.
    """
    dims = tuple(range(1, prediction.dim()))
    reference = prediction if denominator == "prediction" else target
    error = ((target - prediction) ** 2).sum(dim=dims)
    return (error / ((reference ** 2).sum(dim=dims) + NMSE_EPS)).mean()
