"""
Vector-quantized tokenizer module for pathmaps.

This module provides the ViT encoder/decoder pair with a learned codebook
used for both sensing images and per-parameter multipath maps, together
with the stage-1 reconstruction and adversarial objectives.
"""

from .exceptions import (
    TokenizerError,
    BadPatchingError,
    EmptyCodebookError,
    CodebookShapeMismatchError,
    ShapeMismatchError
)
from .codebook import (
    Codebook,
    QuantizeResult,
    nearest_indices,
    quantize,
    init_codebook_from
)
from .vit import (
    TokenizerConfig,
    TokenGrid,
    ViTEncoder,
    ViTDecoder,
    VQTokenizer,
    TokenizerBank,
    sincos_2d,
    encode,
    decode
)
from .losses import (
    VQLoss,
    PatchDiscriminator,
    ssim,
    vq_loss,
    gan_step_losses,
    adaptive_lambda
)

__all__ = [
    'TokenizerError',
    'BadPatchingError',
    'EmptyCodebookError',
    'CodebookShapeMismatchError',
    'ShapeMismatchError',
    'Codebook',
    'QuantizeResult',
    'nearest_indices',
    'quantize',
    'init_codebook_from',
    'TokenizerConfig',
    'TokenGrid',
    'ViTEncoder',
    'ViTDecoder',
    'VQTokenizer',
    'TokenizerBank',
    'sincos_2d',
    'encode',
    'decode',
    'VQLoss',
    'PatchDiscriminator',
    'ssim',
    'vq_loss',
    'gan_step_losses',
    'adaptive_lambda'
]
