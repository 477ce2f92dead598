"""
Structural ablations of the stage-2 model.

Each flag removes exactly one component: the semantic injection, the routed
experts (the frequency embedding stays), the shared experts, or the frequency
conditioning of the token-wise gates.
"""

import copy
import logging
from dataclasses import dataclass, fields, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import torch

from ...storage import DatasetManifest, SnapshotDataset
from ..fusion import FusionConfig
from ..mapper import MapperConfig
from ..model import PathMapModel
from ..training import TrainConfig, TrainingState, train_stage2
from .exceptions import ContradictoryFlagsError
from .report import EvalReport, run_eval

logger = logging.getLogger(__name__)

BASE_VARIANT = "base"


@dataclass(frozen=True)
class AblationFlags:
    """One ablation variant; at most one flag may be set."""
    no_semantic: bool = False
    no_routed: bool = False
    no_shared: bool = False
    no_freq: bool = False

    def __post_init__(self):
        if len(self.active) > 1:
            error_msg = f"An ablation variant removes one component, got {self.active}"
            logger.error(error_msg)
            raise ContradictoryFlagsError(error_msg)

    @property
    def active(self) -> List[str]:
        return [f.name for f in fields(self) if getattr(self, f.name)]

    @property
    def name(self) -> str:
        return self.active[0] if self.active else BASE_VARIANT

    def apply(self, fusion_cfg: FusionConfig, mapper_cfg: MapperConfig) -> Tuple[FusionConfig, MapperConfig]:
        """The structurally modified configs of this variant."""
        if self.no_semantic:
            fusion_cfg = replace(fusion_cfg, alpha=0.0)
        if self.no_routed:
            mapper_cfg = replace(mapper_cfg, n_routed=0, task_n_routed=0)
        if self.no_shared:
            mapper_cfg = replace(mapper_cfg, n_shared=0, task_n_shared=0)
        if self.no_freq:
            mapper_cfg = replace(mapper_cfg, freq_conditioned=False)
        return fusion_cfg, mapper_cfg

    @classmethod
    def single(cls, name: str) -> "AblationFlags":
        if name == BASE_VARIANT:
            return cls()
        valid = [f.name for f in fields(cls)]
        if name not in valid:
            raise ContradictoryFlagsError(f"Unknown ablation {name!r}; expected one of {valid}")
        return cls(**{name: True})


def ablated_model(base: PathMapModel, flags: AblationFlags, seed: int = 0) -> PathMapModel:
    """Build a variant sharing the base model's stage-1 tokenizers (copied) with fresh stage-2 parts."""
    fusion_cfg, mapper_cfg = flags.apply(base.fusion.cfg, base.mapper.cfg)
    torch.manual_seed(seed)
    model = PathMapModel.build(
        base.image_tokenizer.cfg,
        base.mapper.decoders.cfg,
        fusion_cfg,
        mapper_cfg,
        base.map_size,
        image_tokenizer=copy.deepcopy(base.image_tokenizer),
        bank=copy.deepcopy(base.mapper.decoders),
    )
    return model.to(next(base.parameters()).dtype)


def ablate(variants: Sequence[AblationFlags], base: PathMapModel, train_manifest: DatasetManifest,
           test_manifest: DatasetManifest, cfg: TrainConfig, tasks: Optional[Sequence[str]] = None,
           on_trained: Optional[Callable[[str, PathMapModel], None]] = None) -> Dict[str, EvalReport]:
    """Train and evaluate each variant with identical seeds and schedule.

    Args:
        variants (Sequence[AblationFlags]): Variants to run; the base model is included via AblationFlags()
        base (PathMapModel): Model whose stage-1 tokenizers and configs every variant starts from
        train_manifest (DatasetManifest): Stage-2 training snapshots
        test_manifest (DatasetManifest): Evaluation snapshots
        cfg (TrainConfig): Shared training schedule
        tasks (Optional[Sequence[str]]): Tasks to train and score
        on_trained (Optional[Callable]): Called with (variant name, model) after training

    Returns:
        Dict[str, EvalReport]: Report per variant name, in the given order
    """
    tasks = list(tasks or base.tasks)
    reports: Dict[str, EvalReport] = {}
    for flags in variants:
        model = ablated_model(base, flags, cfg.seed)
        logger.info(f"Ablation {flags.name}: training {model.trainable_fraction():.3f} of the parameters")
        dataset = SnapshotDataset(train_manifest, tasks, dtype=next(model.parameters()).dtype)
        train_stage2(model, dataset, cfg, tasks, TrainingState(tasks))
        if on_trained is not None:
            on_trained(flags.name, model)
        report = run_eval(model, test_manifest, tasks, seed=cfg.seed, checkpoint=flags.name)
        report.metadata["variant"] = flags.name
        reports[flags.name] = report
    return reports


def ablation_table(reports: Dict[str, EvalReport]) -> str:
    """Variants as rows, datasets as columns, with the overall average last."""
    datasets = sorted({d for report in reports.values() for d in report.datasets})
    width = max(len(name) for name in reports) + 2 if reports else 10
    lines = ["variant".ljust(width) + "".join(d.rjust(14) for d in datasets) + "average".rjust(12)]
    for name, report in reports.items():
        cells = [f"{report.dataset_average(d):14.6f}" if d in report.datasets else "-".rjust(14) for d in datasets]
        lines.append(name.ljust(width) + "".join(cells) + f"{report.average:12.6f}")
    return "\n".join(lines) + "\n"
