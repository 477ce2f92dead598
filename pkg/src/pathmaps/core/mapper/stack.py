"""
Segmented MoE transformer mapping fused image tokens to per-parameter maps.

N_to token-wise blocks (attention + frequency-routed token MoE) are shared by
all tasks. Their output is then run through N_ta task-wise blocks once per
requested task, each time routed by that task's gating networks. A per-task
linear head projects tokens to the map codebook dimension and the task's map
decoder renders the map.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from ...storage.logs import GateRecord
from ..tokenizer.vit import TokenizerBank, VQTokenizer, sincos_2d
from .exceptions import (
    DuplicateTaskError,
    MapperError,
    MissingPathEmbeddingError,
    TokenShapeError,
    UnknownTaskError
)
from .moe import TASK_WISE, TOKEN_WISE, FrequencyEmbedding, MoELayerConfig, TaskMoE, TokenMoE

logger = logging.getLogger(__name__)

DEFAULT_TASKS = ("power", "delay", "aod_az", "aod_el")

FREEZE_NONE = "full"
FREEZE_TASK_WISE = "task_wise_only"
FREEZE_NEW_TASK = "new_task"
FREEZE_POLICIES = (FREEZE_NONE, FREEZE_TASK_WISE, FREEZE_NEW_TASK)


@dataclass(frozen=True)
class MapperConfig:
    """Mapper architecture.

    Attributes:
        d (int): Token width
        heads (int): Attention heads
        n_token_blocks (int): Token-wise blocks N_to
        n_task_blocks (int): Task-wise blocks N_ta
        n_shared (int): Shared experts per token-wise layer
        n_routed (int): Routed experts per token-wise layer
        top_k (int): Routed experts kept per token
        task_n_shared (int): Shared experts per task-wise layer
        task_n_routed (int): Routed experts per task-wise layer
        task_top_k (int): Routed experts kept per sample and task
        expert_hidden (int): Hidden width of every expert
        freq_conditioned (bool): Feed the frequency embedding into token-wise gates
        max_path_index (int): Size of the path-index embedding table, 0 for none
        tasks (tuple): Ordered task (multipath parameter) names
    """
    d: int = 64
    heads: int = 4
    n_token_blocks: int = 3
    n_task_blocks: int = 1
    n_shared: int = 2
    n_routed: int = 5
    top_k: int = 2
    task_n_shared: int = 2
    task_n_routed: int = 5
    task_top_k: int = 2
    expert_hidden: int = 128
    freq_conditioned: bool = True
    max_path_index: int = 0
    tasks: tuple = DEFAULT_TASKS

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if self.n_token_blocks < 1 or self.n_task_blocks < 1:
            raise MapperError(f"Need at least one block of each kind: {self.n_token_blocks}+{self.n_task_blocks}")
        if self.d % self.heads or self.d % 4:
            raise MapperError(f"d={self.d} must be divisible by heads={self.heads} and by 4")
        if len(set(self.tasks)) != len(self.tasks):
            raise MapperError(f"Duplicate task names: {self.tasks}")
        if self.max_path_index < 0:
            raise MapperError(f"max_path_index must be >= 0: {self.max_path_index}")
        _ = (self.token_moe, self.task_moe)

    @property
    def token_moe(self) -> MoELayerConfig:
        return MoELayerConfig(self.n_shared, self.n_routed, self.top_k, self.expert_hidden,
                              TOKEN_WISE, self.freq_conditioned)

    @property
    def task_moe(self) -> MoELayerConfig:
        return MoELayerConfig(self.task_n_shared, self.task_n_routed, self.task_top_k, self.expert_hidden,
                              TASK_WISE, False)

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["tasks"] = list(self.tasks)
        return out


class MapperBlock(nn.Module):
    """Pre-norm transformer block whose feed-forward sublayer is an MoE layer."""

    def __init__(self, d: int, heads: int, moe: nn.Module):
        super().__init__()
        self.norm1 = nn.LayerNorm(d)
        self.attn = nn.MultiheadAttention(d, heads, dropout=0.0, batch_first=True)
        self.norm2 = nn.LayerNorm(d)
        self.moe = moe

    def forward(self, x: torch.Tensor, **route) -> torch.Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        return x + self.moe(self.norm2(x), **route)


def parameter_scope(name: str) -> str:
    """Freeze scope of a MapperStack parameter name."""
    root = name.split(".", 1)[0]
    if root == "token_blocks":
        return "token_wise"
    if root == "task_blocks":
        return "task_wise"
    if root in ("heads", "decoders"):
        return root
    return "embeddings"


def _task_of(name: str) -> Optional[str]:
    parts = name.split(".")
    if parts[0] == "heads":
        return parts[1]
    if parts[0] == "decoders":
        return parts[2]
    if parts[0] == "task_blocks" and parts[2:4] == ["moe", "gates"]:
        return parts[4]
    return None


def trainable_fraction(module: nn.Module) -> float:
    """Share of parameters (by element count) that currently require gradients."""
    total = sum(p.numel() for p in module.parameters())
    trainable = sum(p.numel() for p in module.parameters() if p.requires_grad)
    return trainable / total if total else 0.0


class MapperStack(nn.Module):
    """Token-wise then task-wise MoE blocks, per-task heads and per-task map decoders.

    Attributes:
        tasks (List[str]): Registered task names in order
        decoders (TokenizerBank): Map tokenizers whose decoders render each task
    """

    def __init__(self, cfg: MapperConfig, decoders: TokenizerBank):
        super().__init__()
        missing = [t for t in cfg.tasks if t not in decoders]
        if missing:
            error_msg = f"No map decoder for tasks {missing}"
            logger.error(error_msg)
            raise UnknownTaskError(error_msg)
        self.cfg = cfg
        self.tasks: List[str] = list(cfg.tasks)
        self.n_z = decoders.cfg.n_z
        self.freq_embed = FrequencyEmbedding(cfg.d)
        if cfg.max_path_index:
            self.path_table = nn.Embedding(cfg.max_path_index, cfg.d)
            self.path_proj = nn.Linear(cfg.d, cfg.d)
        else:
            self.path_table = None
            self.path_proj = None
        self.token_blocks = nn.ModuleList([
            MapperBlock(cfg.d, cfg.heads, TokenMoE(cfg.d, cfg.token_moe)) for _ in range(cfg.n_token_blocks)
        ])
        self.task_blocks = nn.ModuleList([
            MapperBlock(cfg.d, cfg.heads, TaskMoE(cfg.d, cfg.task_moe, self.tasks)) for _ in range(cfg.n_task_blocks)
        ])
        self.heads = nn.ModuleDict({task: self._make_head() for task in self.tasks})
        self.decoders = decoders

    def _make_head(self) -> nn.Module:
        return nn.Sequential(nn.LayerNorm(self.cfg.d), nn.Linear(self.cfg.d, self.n_z))

    def _check_tasks(self, tasks: Iterable[str]) -> List[str]:
        tasks = list(tasks)
        unknown = [t for t in tasks if t not in self.tasks]
        if unknown:
            error_msg = f"Unknown tasks {unknown}; registered: {self.tasks}"
            logger.error(error_msg)
            raise UnknownTaskError(error_msg)
        return tasks

    def embed_path(self, path_index: torch.Tensor) -> torch.Tensor:
        if self.path_table is None:
            error_msg = "A path index was given but the mapper has no path embedding table"
            logger.error(error_msg)
            raise MissingPathEmbeddingError(error_msg)
        index = torch.as_tensor(path_index, dtype=torch.long, device=self.path_table.weight.device).reshape(-1)
        if index.numel() and (index.min() < 1 or index.max() > self.cfg.max_path_index):
            raise MapperError(f"Path index outside [1, {self.cfg.max_path_index}]: {index.tolist()}")
        return self.path_proj(self.path_table(index - 1))

    def encode_shared(self, z: torch.Tensor, frequency_hz: torch.Tensor,
                      path_index: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Run the token-wise blocks on (B, h, w, d) fused tokens; returns (B, h * w, d)."""
        if z.dim() != 4 or z.shape[-1] != self.cfg.d:
            raise TokenShapeError(f"Expected (B, h, w, {self.cfg.d}) tokens, got {tuple(z.shape)}")
        b, h, w, d = z.shape
        x = z.reshape(b, h * w, d) + sincos_2d(d, h, w, z)
        if path_index is not None:
            x = x + self.embed_path(path_index)[:, None, :]
        e_f = self.freq_embed(frequency_hz).to(x.dtype)
        if e_f.shape[0] != b:
            raise TokenShapeError(f"Got {e_f.shape[0]} frequencies for a batch of {b}")
        for block in self.token_blocks:
            x = block(x, e_f=e_f)
        return x

    def forward(self, z: torch.Tensor, frequency_hz: torch.Tensor, tasks: Optional[Sequence[str]] = None,
                path_index: Optional[torch.Tensor] = None) -> Dict[str, torch.Tensor]:
        """Per-task token grids (B, h, w, d) for the requested tasks (default: all)."""
        tasks = self._check_tasks(self.tasks if tasks is None else tasks)
        b, h, w, d = z.shape
        for block in self.task_blocks:
            block.moe.last_gates.clear()
        shared = self.encode_shared(z, frequency_hz, path_index)
        out = {}
        for task in tasks:
            y = shared
            for block in self.task_blocks:
                y = block(y, task=task)
            out[task] = y.reshape(b, h, w, d)
        return out

    def project(self, task_tokens: torch.Tensor, task: str, grid_size: Optional[Tuple[int, int]] = None) -> torch.Tensor:
        """Project (B, h, w, d) tokens to n_z, average-pooled onto grid_size when it differs."""
        self._check_tasks([task])
        if grid_size is not None and tuple(task_tokens.shape[1:3]) != tuple(grid_size):
            pooled = F.adaptive_avg_pool2d(task_tokens.permute(0, 3, 1, 2), tuple(grid_size))
            task_tokens = pooled.permute(0, 2, 3, 1)
        return self.heads[task](task_tokens)

    def decode_task(self, task_tokens: torch.Tensor, task: str, snap_codes: bool = False,
                    grid_size: Optional[Tuple[int, int]] = None) -> torch.Tensor:
        """Render a task's (B, h, w, d) tokens into (B, 1, h * p, w * p) maps.

        With snap_codes every projected token is replaced by its nearest
        map-codebook entry before decoding.
        """
        codes = self.project(task_tokens, task, grid_size)
        decoder: VQTokenizer = self.decoders[task]
        if snap_codes:
            codes = decoder.snap(codes)
        return decoder.decode(codes)

    def predict(self, z: torch.Tensor, frequency_hz: torch.Tensor, tasks: Optional[Sequence[str]] = None,
                path_index: Optional[torch.Tensor] = None, snap_codes: bool = False,
                grid_size: Optional[Tuple[int, int]] = None) -> Dict[str, torch.Tensor]:
        grids = self.forward(z, frequency_hz, tasks, path_index)
        return {task: self.decode_task(grid, task, snap_codes, grid_size) for task, grid in grids.items()}

    def add_task(self, name: str, decoder: Optional[VQTokenizer] = None,
                 freeze_policy: str = FREEZE_TASK_WISE) -> "MapperStack":
        """Register a new task with fresh gates, a fresh head and its decoder.

        Args:
            name (str): New task name
            decoder (Optional[VQTokenizer]): Trained map tokenizer for the task, a fresh one if None
            freeze_policy (str): "full", "task_wise_only" or "new_task"

        Raises:
            DuplicateTaskError: If the task already exists
        """
        if name in self.tasks:
            error_msg = f"Task {name} is already registered"
            logger.error(error_msg)
            raise DuplicateTaskError(error_msg)
        for block in self.task_blocks:
            block.moe.add_gate(name)
        self.heads[name] = self._make_head()
        if decoder is None:
            self.decoders.add(name)
        else:
            self.decoders.register(name, decoder)
        self.tasks.append(name)
        self.set_trainable(freeze_policy, new_tasks=[name])
        logger.info(f"Added task {name} under freeze policy {freeze_policy}; "
                    f"trainable fraction {trainable_fraction(self):.3f}")
        return self

    def set_trainable(self, policy: str, new_tasks: Iterable[str] = (), train_decoders: bool = False) -> None:
        """Apply a freeze policy to every parameter.

        - full: everything except existing decoders (unless train_decoders)
        - task_wise_only: task-wise blocks only
        - new_task: only the gates, heads and decoders of new_tasks

        Parameters owned by new_tasks are always trainable.
        """
        if policy not in FREEZE_POLICIES:
            raise MapperError(f"Unknown freeze policy {policy!r}; expected one of {FREEZE_POLICIES}")
        new_tasks = set(new_tasks)
        for name, param in self.named_parameters():
            scope = parameter_scope(name)
            if _task_of(name) in new_tasks:
                trainable = True
            elif policy == FREEZE_NONE:
                trainable = scope != "decoders" or train_decoders
            elif policy == FREEZE_TASK_WISE:
                trainable = scope == "task_wise"
            else:
                trainable = False
            param.requires_grad_(trainable)

    def parameter_scopes(self) -> Dict[str, List[str]]:
        scopes: Dict[str, List[str]] = {}
        for name, _ in self.named_parameters():
            scopes.setdefault(parameter_scope(name), []).append(name)
        return scopes

    def gate_records(self, frequency_hz: torch.Tensor) -> List[GateRecord]:
        """Gate values recorded by the most recent forward pass."""
        records = []
        for i, block in enumerate(self.token_blocks):
            records.extend(block.moe.gate_records(f"token{i}", frequency_hz))
        for i, block in enumerate(self.task_blocks):
            records.extend(block.moe.gate_records(f"task{i}", frequency_hz))
        return records
