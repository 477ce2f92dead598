"""
Gated modulation of discrete token grids by a continuous semantic embedding.

    z' = embed(codes)
    out = z' + sigmoid(gate(z')) * h(s_c) * alpha

h mean-pools the n_c embedding vectors and maps the result to d, so one
conditioning vector is broadcast over the whole grid while the gate acts per
token and per channel.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Union

import torch
import torch.nn as nn

from ..tokenizer.codebook import QuantizeResult
from .exceptions import EmbeddingShapeError, FusionError
from .providers import DEFAULT_PROVIDER, ContinuousEmbedding

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FusionConfig:
    """Fusion settings.

    Attributes:
        alpha (float): Scale of the semantic injection, 0 disables it
        d (int): Mapper token width
        provider_id (str): Registered semantic provider
        d_c (int): Embedding width produced by the provider
    """
    alpha: float = 0.5
    d: int = 64
    provider_id: str = DEFAULT_PROVIDER
    d_c: int = 64

    def __post_init__(self):
        if self.alpha < 0:
            raise FusionError(f"alpha must be >= 0: {self.alpha}")
        if self.d < 1 or self.d_c < 1:
            raise FusionError(f"Invalid fusion widths d={self.d}, d_c={self.d_c}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class SemanticFusion(nn.Module):
    """Embeds codes to width d and injects the gated semantic vector."""

    def __init__(self, n_z: int, cfg: FusionConfig):
        super().__init__()
        self.cfg = cfg
        self.alpha = cfg.alpha
        self.embed = nn.Linear(n_z, cfg.d)
        self.gate = nn.Linear(cfg.d, cfg.d)
        self.project = nn.Linear(cfg.d_c, cfg.d)
        self.last_gate: Optional[torch.Tensor] = None

    def condition(self, s_c: ContinuousEmbedding) -> torch.Tensor:
        """Global conditioning vector h(s_c), shape (B, d)."""
        if s_c.d_c != self.cfg.d_c:
            raise EmbeddingShapeError(f"Embedding width {s_c.d_c} does not match d_c={self.cfg.d_c}")
        return self.project(s_c.vectors.to(self.project.weight.dtype).mean(dim=1))

    def forward(self, codes: torch.Tensor, s_c: Optional[ContinuousEmbedding] = None) -> torch.Tensor:
        """Fuse (B, h, w, n_z) codes with an embedding into (B, h, w, d) tokens.

        s_c may be None only when alpha is 0.
        """
        if codes.dim() != 4:
            raise EmbeddingShapeError(f"Expected (B, h, w, n_z) codes, got {tuple(codes.shape)}")
        z = self.embed(codes)
        gate = torch.sigmoid(self.gate(z))
        self.last_gate = gate.detach()
        if s_c is None:
            if self.alpha != 0:
                raise FusionError("A semantic embedding is required when alpha > 0")
            return z
        if s_c.vectors.shape[0] != codes.shape[0]:
            raise EmbeddingShapeError(f"Embedding batch {s_c.vectors.shape[0]} does not match codes batch {codes.shape[0]}")
        h = self.condition(s_c)[:, None, None, :]
        return z + gate * h * self.alpha


def fuse(codes: Union[QuantizeResult, torch.Tensor], s_c: Optional[ContinuousEmbedding],
         fusion: SemanticFusion) -> torch.Tensor:
    """Fuse a quantization result (or raw code grid) with a semantic embedding."""
    grid = codes.codes if isinstance(codes, QuantizeResult) else codes
    return fusion(grid, s_c)
