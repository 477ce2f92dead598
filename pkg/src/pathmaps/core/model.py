"""
End-to-end pathmaps model: sensing image -> per-parameter multipath maps.

The image tokenizer (stage 1) turns the image into codes, the semantic
provider and fusion module condition them, and the mapper (stage 2) renders
one map per task through the map tokenizers' decoders.
"""

import logging
from typing import Dict, Optional, Sequence, Tuple

import torch
import torch.nn as nn

from ..storage.checkpoint import Checkpoint, codebook_to_bytes
from .fusion import ContinuousEmbedding, FusionConfig, SemanticFusion, embed_semantic
from .mapper import MapperConfig, MapperStack, trainable_fraction
from .tokenizer import ShapeMismatchError, TokenizerBank, TokenizerConfig, VQTokenizer, quantize

logger = logging.getLogger(__name__)


class PathMapModel(nn.Module):
    """Frozen image tokenizer, semantic fusion and MoE mapper with its map decoders.

    Attributes:
        image_tokenizer (VQTokenizer): Stage-1 RGB tokenizer
        fusion (SemanticFusion): Gated semantic conditioning
        mapper (MapperStack): Stage-2 mapper owning the map tokenizers
        map_size (int): Side of the rendered maps
    """

    def __init__(self, image_tokenizer: VQTokenizer, fusion: SemanticFusion, mapper: MapperStack, map_size: int):
        super().__init__()
        self.image_tokenizer = image_tokenizer
        self.fusion = fusion
        self.mapper = mapper
        self.map_size = map_size
        patch = mapper.decoders.cfg.patch_size
        if map_size % patch:
            raise ShapeMismatchError(f"map_size {map_size} is not divisible by the map patch size {patch}")

    @classmethod
    def build(cls, image_cfg: TokenizerConfig, map_cfg: TokenizerConfig, fusion_cfg: FusionConfig,
              mapper_cfg: MapperConfig, map_size: int, image_tokenizer: Optional[VQTokenizer] = None,
              bank: Optional[TokenizerBank] = None) -> "PathMapModel":
        """Assemble a model, creating fresh stage-1 parts where none are given."""
        image_tokenizer = image_tokenizer if image_tokenizer is not None else VQTokenizer(image_cfg)
        bank = bank if bank is not None else TokenizerBank(map_cfg, mapper_cfg.tasks)
        fusion = SemanticFusion(image_cfg.n_z, fusion_cfg)
        return cls(image_tokenizer, fusion, MapperStack(mapper_cfg, bank), map_size)

    @property
    def tasks(self):
        return list(self.mapper.tasks)

    @property
    def map_grid(self) -> Tuple[int, int]:
        side = self.map_size // self.mapper.decoders.cfg.patch_size
        return side, side

    def freeze_stage1(self, freeze: bool = True) -> None:
        """Freeze (or release) the image tokenizer and all map tokenizers."""
        self.image_tokenizer.requires_grad_(not freeze)
        self.mapper.decoders.requires_grad_(not freeze)

    def semantic_embedding(self, image: torch.Tensor,
                           embedding: Optional[torch.Tensor] = None) -> Optional[ContinuousEmbedding]:
        if embedding is not None:
            return ContinuousEmbedding(embedding)
        if self.fusion.alpha == 0:
            return None
        return embed_semantic(image, self.fusion.cfg.provider_id)

    def image_codes(self, image: torch.Tensor) -> torch.Tensor:
        grid = self.image_tokenizer.encode(image)
        return quantize(grid.tokens, self.image_tokenizer.codebook).codes

    def fused_tokens(self, image: torch.Tensor, embedding: Optional[torch.Tensor] = None) -> torch.Tensor:
        return self.fusion(self.image_codes(image), self.semantic_embedding(image, embedding))

    def forward(self, image: torch.Tensor, frequency_hz: torch.Tensor, tasks: Optional[Sequence[str]] = None,
                path_index: Optional[torch.Tensor] = None, embedding: Optional[torch.Tensor] = None,
                snap_codes: bool = False) -> Dict[str, torch.Tensor]:
        """Predict (B, 1, map_size, map_size) maps per task for (B, 3, H, W) images."""
        z = self.fused_tokens(image, embedding)
        return self.mapper.predict(z, frequency_hz, tasks, path_index, snap_codes, self.map_grid)

    def trainable_fraction(self) -> float:
        return trainable_fraction(self)

    def scopes(self) -> Dict[str, list]:
        """Parameter names per freeze scope, keyed by their full model path."""
        scopes = {"image_tokenizer": [f"image_tokenizer.{n}" for n, _ in self.image_tokenizer.named_parameters()],
                  "fusion": [f"fusion.{n}" for n, _ in self.fusion.named_parameters()]}
        for scope, names in self.mapper.parameter_scopes().items():
            scopes[scope] = [f"mapper.{n}" for n in names]
        return scopes

    def configs(self) -> Dict[str, dict]:
        return {
            "tokenizer": self.image_tokenizer.cfg.to_dict(),
            "map_tokenizer": self.mapper.decoders.cfg.to_dict(),
            "fusion": self.fusion.cfg.to_dict(),
            "mapper": self.mapper.cfg.to_dict(),
        }

    def to_checkpoint(self, metadata: Optional[dict] = None) -> Checkpoint:
        codebooks = {"image": codebook_to_bytes(self.image_tokenizer.codebook.entries)}
        for task in self.tasks:
            codebooks[task] = codebook_to_bytes(self.mapper.decoders[task].codebook.entries)
        return Checkpoint(
            kind="pathmap-model",
            config={**self.configs(), "map_size": self.map_size, "tasks": self.tasks},
            state_dict={k: v.detach().clone() for k, v in self.state_dict().items()},
            codebooks=codebooks,
            scopes=self.scopes(),
            metadata=dict(metadata or {}),
        )


def model_from_checkpoint(ckpt: Checkpoint) -> PathMapModel:
    """Rebuild a PathMapModel (including tasks added after construction) from a checkpoint."""
    config = ckpt.config
    mapper_cfg = MapperConfig(**config["mapper"])
    map_cfg = TokenizerConfig(**config["map_tokenizer"])
    model = PathMapModel.build(
        TokenizerConfig(**config["tokenizer"]),
        map_cfg,
        FusionConfig(**config["fusion"]),
        mapper_cfg,
        config["map_size"],
    )
    for task in config["tasks"]:
        if task not in model.tasks:
            model.mapper.add_task(task, VQTokenizer(map_cfg), freeze_policy="full")
    model.load_state_dict(ckpt.state_dict)
    model.mapper.set_trainable("full", train_decoders=True)
    model.image_tokenizer.requires_grad_(True)
    logger.info(f"Restored model with tasks {model.tasks}")
    return model
