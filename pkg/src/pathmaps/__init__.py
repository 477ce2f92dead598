"""
pathmaps package for UAV-to-ground multipath map generation.

This package synthesizes aligned top-down sensing images and multipath
parameter maps, tokenizes both modalities with vector-quantized ViT
autoencoders, and maps image tokens to per-parameter maps with a
frequency-aware mixture-of-experts transformer.
"""

import logging

__version__ = "0.3.0"

logger = logging.getLogger(__name__)
logger.debug("Initializing pathmaps module")
