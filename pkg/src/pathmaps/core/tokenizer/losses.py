"""
Stage-1 objectives: VQ reconstruction loss, hinge adversarial losses and the
adaptive generator weight.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .codebook import QuantizeResult
from .exceptions import ShapeMismatchError, TokenizerError

logger = logging.getLogger(__name__)

SSIM_WINDOW = 7
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
LAMBDA_DELTA = 1e-6
LAMBDA_MAX = 1e4


def ssim(x: torch.Tensor, y: torch.Tensor, window: int = SSIM_WINDOW) -> torch.Tensor:
    """Mean structural similarity of two (B, C, H, W) batches with data range 1.

    Uses a uniform window (shrunk to the raster size when smaller), computed
    per channel and averaged over channels, positions and samples.
    """
    if x.shape != y.shape:
        raise ShapeMismatchError(f"SSIM inputs differ in shape: {tuple(x.shape)} vs {tuple(y.shape)}")
    k = min(window, x.shape[-2], x.shape[-1])
    mu_x = F.avg_pool2d(x, k, stride=1)
    mu_y = F.avg_pool2d(y, k, stride=1)
    var_x = F.avg_pool2d(x * x, k, stride=1) - mu_x * mu_x
    var_y = F.avg_pool2d(y * y, k, stride=1) - mu_y * mu_y
    cov = F.avg_pool2d(x * y, k, stride=1) - mu_x * mu_y
    numerator = (2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)
    denominator = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return (numerator / denominator).mean()


@dataclass
class VQLoss:
    """VQ objective and its separately reported components."""
    total: torch.Tensor
    mse: torch.Tensor
    ssim_loss: torch.Tensor
    codebook: torch.Tensor
    commitment: torch.Tensor

    @property
    def reconstruction(self) -> torch.Tensor:
        return self.mse + self.ssim_loss

    def components(self) -> dict:
        return {
            "total": float(self.total),
            "mse": float(self.mse),
            "ssim": float(self.ssim_loss),
            "codebook": float(self.codebook),
            "commitment": float(self.commitment),
        }


def vq_loss(x: torch.Tensor, x_hat: torch.Tensor, qr: QuantizeResult, beta: float = 0.25) -> VQLoss:
    """Reconstruction (MSE + 1 - SSIM) plus codebook and beta-weighted commitment terms.

    Args:
        x (torch.Tensor): Target rasters (B, C, H, W)
        x_hat (torch.Tensor): Reconstructions, same shape as x
        qr (QuantizeResult): Quantization output carrying the two VQ terms
        beta (float): Commitment weight

    Returns:
        VQLoss: Total loss and components

    Raises:
        ShapeMismatchError: If x and x_hat differ in shape
        TokenizerError: If beta is not positive
    """
    if x.shape != x_hat.shape:
        raise ShapeMismatchError(f"Reconstruction shape {tuple(x_hat.shape)} differs from {tuple(x.shape)}")
    if beta <= 0:
        raise TokenizerError(f"Commitment weight must be positive: {beta}")
    mse = F.mse_loss(x_hat, x)
    ssim_loss = 1.0 - ssim(x, x_hat)
    total = mse + ssim_loss + qr.codebook_loss + beta * qr.commitment_loss
    return VQLoss(total=total, mse=mse, ssim_loss=ssim_loss, codebook=qr.codebook_loss,
                  commitment=qr.commitment_loss)


class PatchDiscriminator(nn.Module):
    """Three stride-2 convolution stages and a 1-channel logit map."""

    def __init__(self, channels: int, width: int = 32):
        super().__init__()
        layers = []
        in_ch = channels
        for stage in range(3):
            out_ch = width * 2 ** stage
            layers += [nn.Conv2d(in_ch, out_ch, kernel_size=4, stride=2, padding=1), nn.LeakyReLU(0.2)]
            in_ch = out_ch
        layers.append(nn.Conv2d(in_ch, 1, kernel_size=3, stride=1, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


def hinge_real(logits: torch.Tensor) -> torch.Tensor:
    return F.relu(1 - logits).mean()


def hinge_fake(logits: torch.Tensor) -> torch.Tensor:
    return F.relu(1 + logits).mean()


def hinge_generated(logits: torch.Tensor) -> torch.Tensor:
    return -logits.mean()


def gan_step_losses(disc: nn.Module, x: torch.Tensor, x_hat: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Hinge discriminator and generator losses.

    Returns:
        Tuple[torch.Tensor, torch.Tensor]: (loss_D on detached x_hat, loss_G)
    """
    loss_d = hinge_real(disc(x)) + hinge_fake(disc(x_hat.detach()))
    loss_g = hinge_generated(disc(x_hat))
    return loss_d, loss_g


def _grad_norm(loss: torch.Tensor, param: torch.Tensor) -> torch.Tensor:
    if not loss.requires_grad:
        return torch.zeros((), dtype=param.dtype, device=param.device)
    (grad,) = torch.autograd.grad(loss, param, retain_graph=True, allow_unused=True)
    if grad is None:
        return torch.zeros((), dtype=param.dtype, device=param.device)
    return torch.linalg.vector_norm(grad)


def adaptive_lambda(rec_loss: torch.Tensor, gan_loss: torch.Tensor, last_layer: torch.Tensor,
                    delta: float = LAMBDA_DELTA, max_value: float = LAMBDA_MAX) -> torch.Tensor:
    """Balance the adversarial term against reconstruction at the decoder's last layer.

    lambda = |grad rec| / (|grad gan| + delta), clamped to [0, max_value] and detached.
    """
    rec_norm = _grad_norm(rec_loss, last_layer)
    gan_norm = _grad_norm(gan_loss, last_layer)
    lam = torch.clamp(rec_norm / (gan_norm + delta), 0.0, max_value).detach()
    if not torch.isfinite(lam):
        logger.warning(f"Non-finite adaptive weight (rec={float(rec_norm)}, gan={float(gan_norm)}), using 0")
        lam = torch.zeros_like(lam)
    return lam
