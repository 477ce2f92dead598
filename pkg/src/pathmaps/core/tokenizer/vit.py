"""
ViT vector-quantized tokenizer for pathmaps.

One tokenizer turns (B, C, H, W) rasters into an (H/p) x (W/p) grid of
n_z-dimensional tokens, quantizes them against its codebook and decodes
codes back to rasters. The same architecture serves RGB sensing images
(C = 3) and single-channel multipath maps (C = 1).
"""

import logging
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Any, Dict, Iterable, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn

from .codebook import Codebook, QuantizeResult, init_codebook_from, quantize
from .exceptions import BadPatchingError, ShapeMismatchError, TokenizerError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TokenizerConfig:
    """Tokenizer architecture and VQ settings.

    Attributes:
        depth (int): Transformer blocks in each of encoder and decoder
        width (int): Transformer width
        heads (int): Attention heads, must divide width
        patch_size (int): Square patch side p
        K (int): Codebook size
        n_z (int): Code dimension
        beta (float): Commitment weight
        channels (int): Raster channels (3 for images, 1 for maps)
    """
    depth: int = 2
    width: int = 64
    heads: int = 4
    patch_size: int = 8
    K: int = 256
    n_z: int = 16
    beta: float = 0.25
    channels: int = 3

    def __post_init__(self):
        if self.width % self.heads:
            raise TokenizerError(f"width {self.width} is not divisible by heads {self.heads}")
        if self.width % 4:
            raise TokenizerError(f"width {self.width} must be a multiple of 4 for 2-D position codes")
        if self.K < 2:
            raise TokenizerError(f"Codebook size must be >= 2: {self.K}")
        if self.beta <= 0:
            raise TokenizerError(f"Commitment weight must be positive: {self.beta}")
        if min(self.depth, self.patch_size, self.n_z, self.channels) < 1:
            raise TokenizerError(f"Invalid tokenizer config: {self}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class TokenGrid:
    """A batch of token grids.

    Attributes:
        tokens (torch.Tensor): (B, h, w, n_z) continuous tokens
        patch_size (int): Patch side p used to produce them
        source_dims (Tuple[int, int, int]): (H, W, C) of the tokenized raster
    """
    tokens: torch.Tensor
    patch_size: int
    source_dims: Tuple[int, int, int]

    def __post_init__(self):
        H, W, _ = self.source_dims
        h, w = self.tokens.shape[1:3]
        if h * self.patch_size != H or w * self.patch_size != W:
            raise ShapeMismatchError(f"Token grid {h}x{w} does not tile {H}x{W} with patch {self.patch_size}")

    @property
    def grid_size(self) -> Tuple[int, int]:
        return int(self.tokens.shape[1]), int(self.tokens.shape[2])


def _sincos_1d(dim: int, positions: np.ndarray) -> np.ndarray:
    omega = np.arange(dim // 2, dtype=np.float64) / (dim / 2.0)
    omega = 1.0 / 10000 ** omega
    out = np.einsum("m,d->md", positions.reshape(-1), omega)
    return np.concatenate([np.sin(out), np.cos(out)], axis=1)


@lru_cache(maxsize=32)
def _sincos_2d_numpy(dim: int, h: int, w: int) -> np.ndarray:
    grid_w, grid_h = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    return np.concatenate([_sincos_1d(dim // 2, grid_h), _sincos_1d(dim // 2, grid_w)], axis=1)


def sincos_2d(dim: int, h: int, w: int, like: torch.Tensor) -> torch.Tensor:
    """Fixed 2-D sine-cosine position codes, shape (h * w, dim), on like's device/dtype."""
    return torch.from_numpy(_sincos_2d_numpy(dim, h, w)).to(device=like.device, dtype=like.dtype)


def transformer_blocks(depth: int, width: int, heads: int) -> nn.ModuleList:
    return nn.ModuleList([
        nn.TransformerEncoderLayer(
            d_model=width,
            nhead=heads,
            dim_feedforward=4 * width,
            dropout=0.0,
            activation="gelu",
            batch_first=True,
            norm_first=True,
        )
        for _ in range(depth)
    ])


class ViTEncoder(nn.Module):
    """Patchify, add position codes, transformer blocks, project to n_z."""

    def __init__(self, cfg: TokenizerConfig):
        super().__init__()
        self.cfg = cfg
        self.patchify = nn.Conv2d(cfg.channels, cfg.width, kernel_size=cfg.patch_size, stride=cfg.patch_size)
        self.blocks = transformer_blocks(cfg.depth, cfg.width, cfg.heads)
        self.norm = nn.LayerNorm(cfg.width)
        self.to_tokens = nn.Linear(cfg.width, cfg.n_z)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        patches = self.patchify(x)
        b, d, h, w = patches.shape
        hidden = patches.flatten(2).transpose(1, 2) + sincos_2d(d, h, w, patches)
        for block in self.blocks:
            hidden = block(hidden)
        return self.to_tokens(self.norm(hidden)).reshape(b, h, w, self.cfg.n_z)


class ViTDecoder(nn.Module):
    """Project codes to width, transformer blocks, then a linear map to p * p * C pixels."""

    def __init__(self, cfg: TokenizerConfig):
        super().__init__()
        self.cfg = cfg
        self.from_codes = nn.Linear(cfg.n_z, cfg.width)
        self.blocks = transformer_blocks(cfg.depth, cfg.width, cfg.heads)
        self.norm = nn.LayerNorm(cfg.width)
        self.to_pixels = nn.Linear(cfg.width, cfg.patch_size * cfg.patch_size * cfg.channels)

    def forward(self, codes: torch.Tensor) -> torch.Tensor:
        b, h, w, _ = codes.shape
        hidden = self.from_codes(codes.reshape(b, h * w, -1))
        hidden = hidden + sincos_2d(self.cfg.width, h, w, hidden)
        for block in self.blocks:
            hidden = block(hidden)
        pixels = self.to_pixels(self.norm(hidden))
        p, c = self.cfg.patch_size, self.cfg.channels
        pixels = pixels.reshape(b, h, w, p, p, c)
        return torch.einsum("nhwpqc->nchpwq", pixels).reshape(b, c, h * p, w * p)


class VQTokenizer(nn.Module):
    """ViT encoder, codebook and ViT decoder of one modality."""

    def __init__(self, cfg: TokenizerConfig, codebook: Optional[Codebook] = None):
        super().__init__()
        self.cfg = cfg
        self.encoder = ViTEncoder(cfg)
        self.codebook = codebook if codebook is not None else Codebook(cfg.K, cfg.n_z)
        self.decoder = ViTDecoder(cfg)
        if self.codebook.K != cfg.K or self.codebook.n_z != cfg.n_z:
            raise ShapeMismatchError(f"Codebook ({self.codebook.K}, {self.codebook.n_z}) does not fit {cfg}")

    def encode(self, x: torch.Tensor) -> TokenGrid:
        """Tokenize rasters (B, C, H, W).

        Raises:
            BadPatchingError: If H or W is not divisible by the patch size
            ShapeMismatchError: If the channel count differs from the config
        """
        if x.dim() != 4 or x.shape[1] != self.cfg.channels:
            raise ShapeMismatchError(f"Expected (B, {self.cfg.channels}, H, W) input, got {tuple(x.shape)}")
        H, W = int(x.shape[2]), int(x.shape[3])
        p = self.cfg.patch_size
        if H % p or W % p:
            error_msg = f"Raster {H}x{W} is not divisible by patch size {p}"
            logger.error(error_msg)
            raise BadPatchingError(error_msg)
        return TokenGrid(tokens=self.encoder(x), patch_size=p, source_dims=(H, W, self.cfg.channels))

    def quantize(self, grid: TokenGrid) -> QuantizeResult:
        return quantize(grid.tokens, self.codebook)

    def decode(self, codes: torch.Tensor) -> torch.Tensor:
        """Decode (B, h, w, n_z) codes into (B, C, h * p, w * p) rasters."""
        if codes.dim() != 4 or codes.shape[-1] != self.cfg.n_z:
            raise ShapeMismatchError(f"Expected (B, h, w, {self.cfg.n_z}) codes, got {tuple(codes.shape)}")
        return self.decoder(codes)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, TokenGrid, QuantizeResult]:
        grid = self.encode(x)
        result = self.quantize(grid)
        return self.decode(result.codes), grid, result

    def get_last_layer(self) -> torch.Tensor:
        return self.decoder.to_pixels.weight

    def snap(self, tokens: torch.Tensor) -> torch.Tensor:
        """Replace every token by its nearest codebook row (no gradient path)."""
        return quantize(tokens.detach(), self.codebook).codes.detach()


def encode(raster: torch.Tensor, tokenizer: VQTokenizer) -> TokenGrid:
    return tokenizer.encode(raster)


def decode(codes: torch.Tensor, tokenizer: VQTokenizer) -> torch.Tensor:
    return tokenizer.decode(codes)


class TokenizerBank(nn.Module):
    """One map tokenizer per multipath parameter, each with its own codebook."""

    def __init__(self, cfg: TokenizerConfig, params: Iterable[str] = (), seed_codebook: Optional[Codebook] = None):
        super().__init__()
        if cfg.channels != 1:
            raise TokenizerError(f"Map tokenizers are single-channel, got channels={cfg.channels}")
        self.cfg = cfg
        self.tokenizers = nn.ModuleDict()
        for param in params:
            self.add(param, seed_codebook)

    def add(self, param: str, seed_codebook: Optional[Codebook] = None) -> VQTokenizer:
        if param in self.tokenizers:
            raise TokenizerError(f"Tokenizer for {param} already exists")
        codebook = init_codebook_from(seed_codebook, self.cfg) if seed_codebook is not None else None
        self.tokenizers[param] = VQTokenizer(self.cfg, codebook)
        logger.debug(f"Added map tokenizer for {param}")
        return self.tokenizers[param]

    def register(self, param: str, tokenizer: VQTokenizer) -> VQTokenizer:
        if param in self.tokenizers:
            raise TokenizerError(f"Tokenizer for {param} already exists")
        if tokenizer.cfg != self.cfg:
            raise ShapeMismatchError(f"Tokenizer config {tokenizer.cfg} differs from the bank config {self.cfg}")
        self.tokenizers[param] = tokenizer
        return tokenizer

    @property
    def params(self):
        return list(self.tokenizers.keys())

    def __getitem__(self, param: str) -> VQTokenizer:
        if param not in self.tokenizers:
            raise TokenizerError(f"No map tokenizer for {param}")
        return self.tokenizers[param]

    def __contains__(self, param: str) -> bool:
        return param in self.tokenizers
