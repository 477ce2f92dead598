"""
Stage-1 training: VQ tokenizers for sensing images and multipath maps.

Each batch runs one generator step (VQ loss plus the adaptively weighted
hinge generator loss) followed by one discriminator step.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import torch

from ...storage import Checkpoint, CurvePoint, DatasetManifest, codebook_to_bytes, read_raster
from ..tokenizer import (
    PatchDiscriminator,
    TokenizerConfig,
    VQTokenizer,
    adaptive_lambda,
    gan_step_losses,
    vq_loss
)
from ..tokenizer.losses import hinge_generated
from .exceptions import DivergedError, EmptySubsetError, TrainingError
from .schedule import TrainConfig, current_lr, make_optimizer, make_scheduler, seeded_generator
from .state_management import TrainingState

logger = logging.getLogger(__name__)

IMAGE_SOURCE = "image"


@dataclass
class Stage1Result:
    """Outcome of a stage-1 run.

    Attributes:
        tokenizer (VQTokenizer): Trained tokenizer
        checkpoint (Checkpoint): Checkpoint of the final epoch
        curves (List[CurvePoint]): Per-epoch component losses
        lambdas (List[float]): Adaptive generator weight of every step
    """
    tokenizer: VQTokenizer
    checkpoint: Checkpoint
    curves: List[CurvePoint] = field(default_factory=list)
    lambdas: List[float] = field(default_factory=list)

    def curve(self, component: str) -> List[float]:
        return [p.value for p in self.curves if p.component == component]


def collect_rasters(manifest: DatasetManifest, source: str = IMAGE_SOURCE) -> torch.Tensor:
    """Stack the distinct rasters of one source (the image or a map parameter) as (N, C, H, W).

    Raises:
        EmptySubsetError: If the manifest has no rasters for the source
    """
    paths = []
    for entry in manifest.snapshots:
        rel = entry.image_path if source == IMAGE_SOURCE else entry.map_paths.get(source)
        if rel is not None and rel not in paths:
            paths.append(rel)
    if not paths:
        error_msg = f"No {source} rasters in the manifest"
        logger.error(error_msg)
        raise EmptySubsetError(error_msg)
    stacked = np.stack([read_raster(manifest.resolve(rel)) for rel in paths])
    return torch.from_numpy(np.ascontiguousarray(stacked.transpose(0, 3, 1, 2)))


def tokenizer_checkpoint(tokenizer: VQTokenizer, source: str, metadata: Optional[dict] = None) -> Checkpoint:
    return Checkpoint(
        kind="tokenizer",
        config={"tokenizer": tokenizer.cfg.to_dict(), "source": source},
        state_dict={k: v.detach().clone() for k, v in tokenizer.state_dict().items()},
        codebooks={"codebook": codebook_to_bytes(tokenizer.codebook.entries)},
        scopes={"tokenizer": [n for n, _ in tokenizer.named_parameters()]},
        metadata=dict(metadata or {}),
    )


def tokenizer_from_checkpoint(ckpt: Checkpoint) -> VQTokenizer:
    if ckpt.kind != "tokenizer":
        raise TrainingError(f"Expected a tokenizer checkpoint, got {ckpt.kind!r}")
    tokenizer = VQTokenizer(TokenizerConfig(**ckpt.config["tokenizer"]))
    tokenizer.load_state_dict(ckpt.state_dict)
    return tokenizer


def _finite(*values: torch.Tensor) -> bool:
    return all(bool(torch.isfinite(v).all()) for v in values)


def train_stage1(tokenizer: VQTokenizer, rasters: torch.Tensor, cfg: TrainConfig, source: str = IMAGE_SOURCE,
                 discriminator: Optional[PatchDiscriminator] = None,
                 state: Optional[TrainingState] = None) -> Stage1Result:
    """Train a tokenizer on (N, C, H, W) rasters.

    Args:
        tokenizer (VQTokenizer): Tokenizer to train in place
        rasters (torch.Tensor): Training rasters
        cfg (TrainConfig): Optimization settings (lr_stage1, epochs, batch_size, seed, gan_start_epoch)
        source (str): "image" or the map parameter name, recorded in the checkpoint
        discriminator (Optional[PatchDiscriminator]): Critic, created from the seed if None
        state (Optional[TrainingState]): Activity log to update

    Returns:
        Stage1Result: Trained tokenizer, final checkpoint, curves and per-step lambdas

    Raises:
        EmptySubsetError: If there are no rasters
        DivergedError: If a loss turns non-finite; carries the last good checkpoint
    """
    if rasters.shape[0] == 0:
        raise EmptySubsetError("Stage-1 training needs at least one raster")
    generator = seeded_generator(cfg.seed)
    if discriminator is None:
        discriminator = PatchDiscriminator(tokenizer.cfg.channels)
    last_layer = tokenizer.get_last_layer()
    device, dtype = last_layer.device, last_layer.dtype
    rasters = rasters.to(device=device, dtype=dtype)
    discriminator.to(device=device, dtype=dtype)
    state = state or TrainingState()

    opt_g = make_optimizer(tokenizer.parameters(), cfg.lr_stage1)
    opt_d = make_optimizer(discriminator.parameters(), cfg.lr_stage1)
    scheduler = make_scheduler(opt_g, cfg)

    result = Stage1Result(tokenizer=tokenizer, checkpoint=tokenizer_checkpoint(tokenizer, source))
    last_good: Optional[Checkpoint] = None
    n = rasters.shape[0]
    logger.info(f"Stage 1 ({source}): {n} rasters, {cfg.epochs} epochs, batch {cfg.batch_size}")

    for epoch in range(cfg.epochs):
        state.epoch = epoch + 1
        use_gan = epoch >= cfg.gan_start_epoch
        sums: Dict[str, float] = {}
        batches = 0
        order = torch.randperm(n, generator=generator)
        for start in range(0, n, cfg.batch_size):
            x = rasters[order[start:start + cfg.batch_size]]
            x_hat, grid, qr = tokenizer(x)
            vq = vq_loss(x, x_hat, qr, tokenizer.cfg.beta)
            total = vq.total
            loss_g = torch.zeros((), device=device, dtype=dtype)
            lam = torch.zeros((), device=device, dtype=dtype)
            if use_gan:
                loss_g = hinge_generated(discriminator(x_hat))
                lam = adaptive_lambda(vq.reconstruction, loss_g, tokenizer.get_last_layer())
                total = total + lam * loss_g

            if not _finite(total):
                error_msg = f"Stage-1 loss diverged at epoch {epoch + 1}"
                logger.error(error_msg)
                state.add_activity("stage1", "diverged", {"source": source})
                raise DivergedError(error_msg, last_good=last_good)

            opt_g.zero_grad()
            total.backward()
            opt_g.step()
            tokenizer.codebook.record_usage(qr.indices)
            tokenizer.codebook.refresh_dead_codes(grid.tokens, generator)

            loss_d = torch.zeros((), device=device, dtype=dtype)
            if use_gan:
                loss_d, _ = gan_step_losses(discriminator, x, x_hat.detach())
                opt_d.zero_grad()
                loss_d.backward()
                opt_d.step()

            result.lambdas.append(float(lam))
            step = {**vq.components(), "gan_g": float(loss_g), "gan_d": float(loss_d), "lambda": float(lam),
                    "perplexity": tokenizer.codebook.usage_stats(qr.indices)["perplexity"]}
            for key, value in step.items():
                sums[key] = sums.get(key, 0.0) + value
            batches += 1
            logger.debug(f"Stage 1 epoch {epoch + 1} batch {batches}: total={step['total']:.6f} lambda={step['lambda']:.4g}")

        means = {key: value / batches for key, value in sums.items()}
        means["lr"] = current_lr(opt_g)
        for key, value in means.items():
            result.curves.append(CurvePoint(epoch + 1, key, value))
        if not all(math.isfinite(v) for v in means.values()):
            raise DivergedError(f"Stage-1 epoch {epoch + 1} produced non-finite losses", last_good=last_good)
        last_good = tokenizer_checkpoint(tokenizer, source, {"epoch": epoch + 1, "seed": cfg.seed})
        scheduler.step(means["total"])
        state.update_best(means["total"])
        state.add_activity("stage1", "epoch", {"source": source, "total": means["total"], "mse": means["mse"]})
        logger.info(f"Stage 1 ({source}) epoch {epoch + 1}/{cfg.epochs}: total={means['total']:.6f} "
                    f"mse={means['mse']:.6f} perplexity={means['perplexity']:.2f} lr={means['lr']:.2e}")

    result.checkpoint = last_good
    return result
