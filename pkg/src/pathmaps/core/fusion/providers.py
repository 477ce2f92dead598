"""
Semantic embedding providers for pathmaps.

A provider maps a batch of RGB images (B, 3, H, W) in [0, 1] to continuous
embeddings (B, n_c, d_c). Providers are registered by id; the default
"frozen-vit" provider is a small transformer with fixed random weights that
is never trained. Precomputed embeddings read from disk bypass providers.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..tokenizer.vit import sincos_2d, transformer_blocks
from .exceptions import EmbeddingShapeError, FusionError, UnknownProviderError

logger = logging.getLogger(__name__)

DEFAULT_PROVIDER = "frozen-vit"


@dataclass
class ContinuousEmbedding:
    """Continuous semantic embedding of a batch of images.

    Attributes:
        vectors (torch.Tensor): (B, n_c, d_c) embedding vectors
    """
    vectors: torch.Tensor

    def __post_init__(self):
        if self.vectors.dim() == 2:
            self.vectors = self.vectors.unsqueeze(0)
        if self.vectors.dim() != 3 or self.vectors.shape[1] < 1:
            raise EmbeddingShapeError(f"Expected (B, n_c, d_c) embedding, got {tuple(self.vectors.shape)}")
        if not torch.isfinite(self.vectors).all():
            raise FusionError("Embedding contains non-finite values")

    @property
    def n_c(self) -> int:
        return int(self.vectors.shape[1])

    @property
    def d_c(self) -> int:
        return int(self.vectors.shape[2])


class FrozenViTProvider(nn.Module):
    """Fixed-seed ViT encoder standing in for a pretrained image-text model.

    Images are resized to input_size, cut into patch_size patches and passed
    through depth transformer blocks; one d_c vector per patch is returned.
    """

    def __init__(self, seed: int = 0, input_size: int = 64, patch_size: int = 16, d_c: int = 64,
                 depth: int = 4, heads: int = 4):
        super().__init__()
        self.input_size = input_size
        self.patch_size = patch_size
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.patchify = nn.Conv2d(3, d_c, kernel_size=patch_size, stride=patch_size)
            self.blocks = transformer_blocks(depth, d_c, heads)
            self.norm = nn.LayerNorm(d_c)
        self.requires_grad_(False)
        self.eval()

    @property
    def n_c(self) -> int:
        return (self.input_size // self.patch_size) ** 2

    def train(self, mode: bool = True) -> "FrozenViTProvider":
        return super().train(False)

    @torch.no_grad()
    def forward(self, images: torch.Tensor) -> torch.Tensor:
        x = images.to(self.patchify.weight.dtype)
        if x.shape[-2:] != (self.input_size, self.input_size):
            x = F.interpolate(x, size=(self.input_size, self.input_size), mode="bilinear", align_corners=False)
        patches = self.patchify(x * 2.0 - 1.0)
        b, d, h, w = patches.shape
        hidden = patches.flatten(2).transpose(1, 2) + sincos_2d(d, h, w, patches)
        for block in self.blocks:
            hidden = block(hidden)
        return self.norm(hidden)


ProviderFactory = Callable[[], nn.Module]

_PROVIDERS: Dict[str, ProviderFactory] = {
    DEFAULT_PROVIDER: FrozenViTProvider,
}
_INSTANCES: Dict[str, nn.Module] = {}


def register_provider(provider_id: str, factory: ProviderFactory) -> None:
    """Register a provider factory under provider_id, replacing any previous one."""
    _PROVIDERS[provider_id] = factory
    _INSTANCES.pop(provider_id, None)
    logger.info(f"Registered semantic provider {provider_id}")


def available_providers():
    return sorted(_PROVIDERS)


def get_provider(provider_id: str = DEFAULT_PROVIDER) -> nn.Module:
    """Return the shared instance of a registered provider.

    Raises:
        UnknownProviderError: If provider_id is not registered
    """
    if provider_id not in _PROVIDERS:
        error_msg = f"Unknown semantic provider {provider_id!r}; available: {available_providers()}"
        logger.error(error_msg)
        raise UnknownProviderError(error_msg)
    if provider_id not in _INSTANCES:
        _INSTANCES[provider_id] = _PROVIDERS[provider_id]()
    return _INSTANCES[provider_id]


def embed_semantic(image: torch.Tensor, provider: Union[str, nn.Module] = DEFAULT_PROVIDER) -> ContinuousEmbedding:
    """Embed images with a semantic provider.

    Args:
        image (torch.Tensor): (B, 3, H, W) or (3, H, W) image in [0, 1]
        provider (Union[str, nn.Module]): Provider id or provider instance

    Returns:
        ContinuousEmbedding: (B, n_c, d_c) embedding

    Raises:
        UnknownProviderError: If a provider id is not registered
        FusionError: If image values leave [0, 1]
    """
    if isinstance(provider, str):
        provider = get_provider(provider)
    if image.dim() == 3:
        image = image.unsqueeze(0)
    if image.numel() and (image.min() < 0.0 or image.max() > 1.0):
        raise FusionError(f"Image values must lie in [0, 1], got [{float(image.min())}, {float(image.max())}]")
    weights = next(provider.parameters(), None)
    with torch.no_grad():
        if weights is None:
            return ContinuousEmbedding(provider(image))
        return ContinuousEmbedding(provider(image.to(weights.device)).to(image.device))


def numpy_embedder(provider_id: str = DEFAULT_PROVIDER,
                   provider: Optional[nn.Module] = None) -> Callable[[np.ndarray], np.ndarray]:
    """Adapt a provider to the (H, W, 3) -> (n_c, d_c) callable used when precomputing embeddings."""
    model = provider if provider is not None else get_provider(provider_id)

    def embed(image: np.ndarray) -> np.ndarray:
        tensor = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32)).permute(2, 0, 1)
        return embed_semantic(tensor, model).vectors[0].cpu().numpy()

    return embed
