"""
Codebook and nearest-neighbour quantization for pathmaps tokenizers.

Quantization maps every token to its nearest codebook row in Euclidean
distance (lowest index on ties). The returned codes are exact codebook rows,
and the backward pass hands the code gradient to the tokens unchanged.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .exceptions import CodebookShapeMismatchError, EmptyCodebookError, ShapeMismatchError, TokenizerError

logger = logging.getLogger(__name__)

DEAD_CODE_STEPS = 200
DISTANCE_CHUNK = 256


class Codebook(nn.Module):
    """K learned code vectors of dimension n_z.

    Attributes:
        entries (nn.Parameter): (K, n_z) code matrix
        age (torch.Tensor): Steps since each entry was last selected
        dead_code_steps (int): Age at which an entry is re-seeded
    """

    def __init__(self, K: int, n_z: int, dead_code_steps: int = DEAD_CODE_STEPS):
        super().__init__()
        if K < 0 or n_z < 1:
            raise TokenizerError(f"Invalid codebook shape ({K}, {n_z})")
        self.entries = nn.Parameter(torch.empty(K, n_z).uniform_(-1.0 / max(K, 1), 1.0 / max(K, 1)))
        self.register_buffer("age", torch.zeros(K, dtype=torch.long))
        self.dead_code_steps = dead_code_steps

    @classmethod
    def from_entries(cls, entries: torch.Tensor, dead_code_steps: int = DEAD_CODE_STEPS) -> "Codebook":
        book = cls(entries.shape[0], entries.shape[1], dead_code_steps)
        with torch.no_grad():
            book.entries.data = entries.detach().clone()
        return book

    @property
    def K(self) -> int:
        return int(self.entries.shape[0])

    @property
    def n_z(self) -> int:
        return int(self.entries.shape[1])

    def lookup(self, indices: torch.Tensor) -> torch.Tensor:
        return self.entries[indices]

    @torch.no_grad()
    def record_usage(self, indices: torch.Tensor) -> None:
        self.age += 1
        self.age[indices.reshape(-1).unique()] = 0

    @torch.no_grad()
    def refresh_dead_codes(self, tokens: torch.Tensor, generator: Optional[torch.Generator] = None) -> int:
        """Re-seed entries unused for dead_code_steps steps with random token vectors.

        Returns:
            int: Number of re-seeded entries
        """
        dead = torch.nonzero(self.age >= self.dead_code_steps).reshape(-1)
        if dead.numel() == 0:
            return 0
        flat = tokens.detach().reshape(-1, self.n_z)
        picks = torch.randint(0, flat.shape[0], (dead.numel(),), generator=generator, device=flat.device)
        self.entries.data[dead] = flat[picks].to(self.entries.dtype)
        self.age[dead] = 0
        logger.debug(f"Re-seeded {dead.numel()} dead codebook entries")
        return int(dead.numel())

    def usage_stats(self, indices: torch.Tensor) -> Dict[str, float]:
        """Perplexity and used fraction of a batch of indices."""
        counts = torch.bincount(indices.reshape(-1), minlength=self.K).to(torch.float64)
        probs = counts / counts.sum().clamp_min(1.0)
        nonzero = probs[probs > 0]
        perplexity = torch.exp(-(nonzero * nonzero.log()).sum())
        return {
            "perplexity": float(perplexity),
            "used_fraction": float((counts > 0).sum()) / max(self.K, 1),
            "max_age": float(self.age.max()) if self.K else 0.0,
        }


@dataclass
class QuantizeResult:
    """Output of quantize.

    Attributes:
        codes (torch.Tensor): (B, h, w, n_z) selected entries
        indices (torch.Tensor): (B, h, w) selected entry indices
        codebook_loss (torch.Tensor): mean ||sg(tokens) - codes||^2
        commitment_loss (torch.Tensor): mean ||sg(codes) - tokens||^2
    """
    codes: torch.Tensor
    indices: torch.Tensor
    codebook_loss: torch.Tensor
    commitment_loss: torch.Tensor


class _StraightThrough(torch.autograd.Function):
    """Forward returns the codes bit-exactly; backward passes the gradient to the tokens."""

    @staticmethod
    def forward(ctx, tokens, codes):
        return codes.clone()

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output, None


def nearest_indices(flat: torch.Tensor, entries: torch.Tensor) -> torch.Tensor:
    """Index of the nearest entry for each row of flat (N, n_z), lowest index on ties.

    Distances are squared differences summed in float64, in token chunks.
    """
    flat64 = flat.detach().to(torch.float64)
    entries64 = entries.detach().to(torch.float64)
    out = []
    for start in range(0, flat64.shape[0], DISTANCE_CHUNK):
        chunk = flat64[start:start + DISTANCE_CHUNK]
        distances = ((chunk[:, None, :] - entries64[None, :, :]) ** 2).sum(dim=-1)
        out.append(torch.argmin(distances, dim=1))
    if not out:
        return torch.zeros(0, dtype=torch.long, device=flat.device)
    return torch.cat(out)


def quantize(tokens: torch.Tensor, codebook: Codebook) -> QuantizeResult:
    """Quantize a token grid against a codebook.

    Args:
        tokens (torch.Tensor): (..., n_z) continuous tokens, typically (B, h, w, n_z)
        codebook (Codebook): Codebook to quantize against

    Returns:
        QuantizeResult: Exact codes, indices and the two VQ loss terms

    Raises:
        EmptyCodebookError: If the codebook has no entries
        ShapeMismatchError: If the token dimension differs from n_z
    """
    if codebook.K == 0:
        error_msg = "Cannot quantize against an empty codebook"
        logger.error(error_msg)
        raise EmptyCodebookError(error_msg)
    if tokens.shape[-1] != codebook.n_z:
        error_msg = f"Token dimension {tokens.shape[-1]} does not match codebook n_z {codebook.n_z}"
        logger.error(error_msg)
        raise ShapeMismatchError(error_msg)

    flat = tokens.reshape(-1, codebook.n_z)
    indices = nearest_indices(flat, codebook.entries)
    selected = codebook.lookup(indices)
    codebook_loss = F.mse_loss(selected, flat.detach())
    commitment_loss = F.mse_loss(flat, selected.detach())
    codes = _StraightThrough.apply(flat, selected.detach()).reshape(tokens.shape)

    return QuantizeResult(
        codes=codes,
        indices=indices.reshape(tokens.shape[:-1]),
        codebook_loss=codebook_loss,
        commitment_loss=commitment_loss,
    )


def init_codebook_from(source: Codebook, target_config) -> Codebook:
    """Seed a new codebook with a bit-exact, non-aliased copy of source.

    Args:
        source (Codebook): Trained codebook, typically from the image tokenizer
        target_config (TokenizerConfig): Config of the tokenizer receiving the copy

    Raises:
        CodebookShapeMismatchError: If (K, n_z) differs from the source shape
    """
    K, n_z = target_config.K, target_config.n_z
    if source.K != K or source.n_z != n_z:
        error_msg = f"Source codebook ({source.K}, {source.n_z}) does not match target ({K}, {n_z})"
        logger.error(error_msg)
        raise CodebookShapeMismatchError(error_msg)
    logger.info(f"Initialized a ({K}, {n_z}) codebook from a trained source codebook")
    return Codebook.from_entries(source.entries, source.dead_code_steps)
