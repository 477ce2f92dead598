"""
Mixture-of-experts feed-forward layers for the pathmaps mapper.

Both layer styles combine always-on shared experts with routed experts
selected by a softmax gate and a Top-K mask. Retained gate values are not
renormalized. Ties in the gate ranking go to the lowest expert index, and
expert outputs are accumulated in index order.

- TokenMoE routes every token on its own, from g_f(g_t(token) + E_f) where
  E_f embeds the carrier frequency.
- TaskMoE routes once per (sample, task) from the mean-pooled grid through
  a gating network owned by that task.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from ...storage.logs import GateRecord
from .exceptions import BadFrequencyError, MapperError, TokenShapeError, UnknownTaskError

logger = logging.getLogger(__name__)

FREQ_ANCHOR_HZ = 1e9
FREQ_SPAN = math.log10(30.0)

TOKEN_WISE = "token_wise"
TASK_WISE = "task_wise"


@dataclass(frozen=True)
class MoELayerConfig:
    """Expert counts and routing of one MoE feed-forward layer.

    Attributes:
        n_shared (int): Always-applied experts
        n_routed (int): Gated experts
        top_k (int): Routed experts kept per token (or per sample and task)
        expert_hidden (int): Hidden width of every expert
        style (str): "token_wise" or "task_wise"
        freq_conditioned (bool): Whether token-wise gates see the frequency embedding
    """
    n_shared: int = 2
    n_routed: int = 5
    top_k: int = 2
    expert_hidden: int = 128
    style: str = TOKEN_WISE
    freq_conditioned: bool = True

    def __post_init__(self):
        if self.style not in (TOKEN_WISE, TASK_WISE):
            raise MapperError(f"Unknown MoE style {self.style!r}")
        if self.n_shared < 0 or self.n_routed < 0 or self.n_shared + self.n_routed < 1:
            raise MapperError(f"An MoE layer needs at least one expert: shared={self.n_shared}, routed={self.n_routed}")
        if self.n_routed > 0 and not 1 <= self.top_k <= self.n_routed:
            raise MapperError(f"top_k must lie in [1, {self.n_routed}]: {self.top_k}")
        if self.expert_hidden < 1:
            raise MapperError(f"expert_hidden must be positive: {self.expert_hidden}")


def make_expert(d: int, hidden: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(d, hidden), nn.GELU(), nn.Linear(hidden, d))


def normalized_log_frequency(frequency_hz: torch.Tensor) -> torch.Tensor:
    """u = log10(f / 1 GHz) / log10(30), computed in float64.

    Raises:
        BadFrequencyError: If any frequency is not positive and finite
    """
    f = torch.as_tensor(frequency_hz, dtype=torch.float64)
    if not torch.all(torch.isfinite(f) & (f > 0)):
        error_msg = f"Frequencies must be positive and finite: {f.tolist()}"
        logger.error(error_msg)
        raise BadFrequencyError(error_msg)
    return torch.log10(f / FREQ_ANCHOR_HZ) / FREQ_SPAN


class FrequencyEmbedding(nn.Module):
    """Two affine layers with a SiLU between them, applied to the normalized log-frequency."""

    def __init__(self, d: int, hidden: Optional[int] = None):
        super().__init__()
        hidden = hidden or d
        self.net = nn.Sequential(nn.Linear(1, hidden), nn.SiLU(), nn.Linear(hidden, d))

    def forward(self, frequency_hz: torch.Tensor) -> torch.Tensor:
        u = normalized_log_frequency(frequency_hz).reshape(-1, 1)
        weight = self.net[0].weight
        return self.net(u.to(device=weight.device, dtype=weight.dtype))


def top_k_mask(probs: torch.Tensor, k: int) -> torch.Tensor:
    """0/1 mask keeping the k largest entries of the last dim, lowest index first on ties."""
    order = torch.sort(probs, dim=-1, descending=True, stable=True).indices
    mask = torch.zeros_like(probs)
    return mask.scatter(-1, order[..., :k], 1.0)


class _MoEBase(nn.Module):

    def __init__(self, d: int, cfg: MoELayerConfig):
        super().__init__()
        self.d = d
        self.cfg = cfg
        self.shared = nn.ModuleList([make_expert(d, cfg.expert_hidden) for _ in range(cfg.n_shared)])
        self.routed = nn.ModuleList([make_expert(d, cfg.expert_hidden) for _ in range(cfg.n_routed)])

    def shared_output(self, x: torch.Tensor) -> torch.Tensor:
        out = torch.zeros_like(x)
        for expert in self.shared:
            out = out + expert(x)
        return out


class TokenMoE(_MoEBase):
    """Token-wise MoE with frequency-aware routing.

    Attributes:
        last_probs (Optional[torch.Tensor]): Pre-mask softmax gates of the last call, (B, N, n_routed)
        last_gates (Optional[torch.Tensor]): Post-mask gates of the last call
    """

    def __init__(self, d: int, cfg: MoELayerConfig):
        if cfg.style != TOKEN_WISE:
            raise MapperError(f"TokenMoE needs a token_wise config, got {cfg.style}")
        super().__init__(d, cfg)
        if cfg.n_routed:
            self.g_t = nn.Linear(d, d)
            self.g_f = nn.Linear(d, cfg.n_routed)
        self.last_probs: Optional[torch.Tensor] = None
        self.last_gates: Optional[torch.Tensor] = None

    def gate_probs(self, x: torch.Tensor, e_f: Optional[torch.Tensor]) -> torch.Tensor:
        hidden = self.g_t(x)
        if self.cfg.freq_conditioned:
            if e_f is None:
                raise MapperError("Frequency-conditioned routing needs a frequency embedding")
            hidden = hidden + e_f[:, None, :]
        return F.softmax(self.g_f(hidden), dim=-1)

    def forward(self, x: torch.Tensor, e_f: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Mix experts for (B, N, d) tokens; e_f is the (B, d) frequency embedding."""
        if x.dim() != 3 or x.shape[-1] != self.d:
            raise TokenShapeError(f"Expected (B, N, {self.d}) tokens, got {tuple(x.shape)}")
        out = self.shared_output(x)
        if not self.cfg.n_routed:
            self.last_probs = self.last_gates = None
            return out

        probs = self.gate_probs(x, e_f)
        gates = probs * top_k_mask(probs, self.cfg.top_k)
        self.last_probs, self.last_gates = probs.detach(), gates.detach()

        b, n, d = x.shape
        flat_x = x.reshape(b * n, d)
        flat_gates = gates.reshape(b * n, -1)
        flat_out = out.reshape(b * n, d)
        selected = flat_gates != 0
        for k, expert in enumerate(self.routed):
            rows = torch.nonzero(selected[:, k]).reshape(-1)
            if rows.numel() == 0:
                continue
            contribution = flat_gates[rows, k:k + 1] * expert(flat_x[rows])
            flat_out = flat_out.index_add(0, rows, contribution)
        return flat_out.reshape(b, n, d)

    def gate_records(self, block: str, frequency_hz: torch.Tensor) -> List[GateRecord]:
        if self.last_gates is None:
            return []
        freqs = torch.as_tensor(frequency_hz, dtype=torch.float64).reshape(-1).tolist()
        records = []
        for sample, token, expert in torch.nonzero(self.last_gates).tolist():
            records.append(GateRecord(block=block, token_or_task=f"{sample}/{token}", expert_index=expert,
                                      gate_value=float(self.last_gates[sample, token, expert]),
                                      frequency_hz=freqs[sample]))
        return records


class TaskMoE(_MoEBase):
    """Task-wise MoE: one routing decision per (sample, task) shared by all tokens.

    Attributes:
        gates (nn.ModuleDict): Per-task gating networks d -> n_routed
        last_probs (Dict[str, torch.Tensor]): Pre-mask gates per task of the last calls, (B, n_routed)
        last_gates (Dict[str, torch.Tensor]): Post-mask gates per task
    """

    def __init__(self, d: int, cfg: MoELayerConfig, tasks: List[str] = ()):
        if cfg.style != TASK_WISE:
            raise MapperError(f"TaskMoE needs a task_wise config, got {cfg.style}")
        super().__init__(d, cfg)
        self.gates = nn.ModuleDict()
        for task in tasks:
            self.add_gate(task)
        self.last_probs: Dict[str, torch.Tensor] = {}
        self.last_gates: Dict[str, torch.Tensor] = {}

    def add_gate(self, task: str) -> None:
        if task in self.gates:
            raise MapperError(f"Task {task} already has a gating network")
        self.gates[task] = nn.Linear(self.d, self.cfg.n_routed) if self.cfg.n_routed else nn.Identity()

    def forward(self, x: torch.Tensor, task: str) -> torch.Tensor:
        if task not in self.gates:
            error_msg = f"Unknown task {task!r}; registered: {list(self.gates.keys())}"
            logger.error(error_msg)
            raise UnknownTaskError(error_msg)
        if x.dim() != 3 or x.shape[-1] != self.d:
            raise TokenShapeError(f"Expected (B, N, {self.d}) tokens, got {tuple(x.shape)}")
        out = self.shared_output(x)
        if not self.cfg.n_routed:
            return out

        probs = F.softmax(self.gates[task](x.mean(dim=1)), dim=-1)
        gates = probs * top_k_mask(probs, self.cfg.top_k)
        self.last_probs[task], self.last_gates[task] = probs.detach(), gates.detach()

        selected = gates != 0
        for k, expert in enumerate(self.routed):
            samples = torch.nonzero(selected[:, k]).reshape(-1)
            if samples.numel() == 0:
                continue
            contribution = gates[samples, k][:, None, None] * expert(x[samples])
            out = out.index_add(0, samples, contribution)
        return out

    def gate_records(self, block: str, frequency_hz: torch.Tensor) -> List[GateRecord]:
        freqs = torch.as_tensor(frequency_hz, dtype=torch.float64).reshape(-1).tolist()
        records = []
        for task, gates in self.last_gates.items():
            for sample, expert in torch.nonzero(gates).tolist():
                records.append(GateRecord(block=block, token_or_task=f"{sample}/{task}", expert_index=expert,
                                          gate_value=float(gates[sample, expert]), frequency_hz=freqs[sample]))
        return records
