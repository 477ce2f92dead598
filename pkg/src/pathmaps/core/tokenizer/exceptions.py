"""
Tokenizer exceptions for pathmaps.

This module defines the errors raised by the vector-quantized ViT
tokenizers, their codebooks and their training losses.
"""

from ...exceptions import PathmapsError


class TokenizerError(PathmapsError):
    """Base exception for tokenizer errors."""
    code = "tokenizer-error"


class BadPatchingError(TokenizerError):
    """Exception raised when raster dimensions are not divisible by the patch size."""
    code = "bad-patching"


class EmptyCodebookError(TokenizerError):
    """Exception raised when quantizing against a codebook with no entries."""
    code = "empty-codebook"


class CodebookShapeMismatchError(TokenizerError):
    """Exception raised when a codebook cannot seed another tokenizer's codebook."""
    code = "codebook-shape-mismatch"


class ShapeMismatchError(TokenizerError):
    """Exception raised when token or code dimensions do not match the tokenizer."""
    code = "shape-mismatch"
