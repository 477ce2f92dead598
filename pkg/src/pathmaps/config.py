"""
Experiment configuration for pathmaps.

A config file is UTF-8 JSON with the sections synth, tokenizer,
map_tokenizer, fusion, mapper and train, each mirroring its dataclass.
Unknown sections or keys are rejected. Process settings (device, output
root, worker threads) come from the environment, optionally via .env.
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Union

from dotenv import load_dotenv

from .core.fusion import FusionConfig
from .core.mapper import MapperConfig
from .core.scene import SynthConfig
from .core.tokenizer import TokenizerConfig
from .core.training import TrainConfig
from .exceptions import PathmapsError

logger = logging.getLogger(__name__)

SECTIONS = {
    "synth": SynthConfig,
    "tokenizer": TokenizerConfig,
    "map_tokenizer": TokenizerConfig,
    "fusion": FusionConfig,
    "mapper": MapperConfig,
    "train": TrainConfig,
}
TUPLE_FIELDS = {"params", "tasks"}


class ConfigError(PathmapsError):
    """Exception raised for unreadable, unknown or inconsistent configuration."""
    code = "config-error"


@dataclass(frozen=True)
class ExperimentConfig:
    """All settings of one experiment."""
    synth: SynthConfig = field(default_factory=SynthConfig)
    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)
    map_tokenizer: TokenizerConfig = field(default_factory=lambda: TokenizerConfig(channels=1))
    fusion: FusionConfig = field(default_factory=FusionConfig)
    mapper: MapperConfig = field(default_factory=MapperConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        out = {}
        for name in SECTIONS:
            section = asdict(getattr(self, name))
            for key in TUPLE_FIELDS & set(section):
                section[key] = list(section[key])
            out[name] = section
        return out

    def validate(self) -> "ExperimentConfig":
        """Check cross-section consistency.

        Raises:
            ConfigError: If sections disagree on shared sizes
        """
        problems = []
        if self.map_tokenizer.channels != 1:
            problems.append("map_tokenizer.channels must be 1")
        if self.tokenizer.channels != 3:
            problems.append("tokenizer.channels must be 3")
        if self.fusion.d != self.mapper.d:
            problems.append(f"fusion.d ({self.fusion.d}) must equal mapper.d ({self.mapper.d})")
        if self.synth.image_size % self.tokenizer.patch_size:
            problems.append(f"synth.image_size {self.synth.image_size} is not divisible by tokenizer.patch_size")
        if self.synth.map_size % self.map_tokenizer.patch_size:
            problems.append(f"synth.map_size {self.synth.map_size} is not divisible by map_tokenizer.patch_size")
        missing = [t for t in self.mapper.tasks if t not in self.synth.params]
        if missing:
            problems.append(f"mapper.tasks {missing} are not synthesized (synth.params)")
        if problems:
            error_msg = "Inconsistent configuration: " + "; ".join(problems)
            logger.error(error_msg)
            raise ConfigError(error_msg)
        return self


def _section(name: str, current: Any, values: Any) -> Any:
    if not isinstance(values, dict):
        raise ConfigError(f"Config section {name!r} must be an object")
    known = {f.name for f in fields(SECTIONS[name])}
    unknown = sorted(set(values) - known)
    if unknown:
        error_msg = f"Unknown keys in config section {name!r}: {unknown}"
        logger.error(error_msg)
        raise ConfigError(error_msg)
    values = {k: tuple(v) if k in TUPLE_FIELDS and isinstance(v, list) else v for k, v in values.items()}
    try:
        return replace(current, **values)
    except (PathmapsError, TypeError, ValueError) as e:
        error_msg = f"Invalid config section {name!r}: {e}"
        logger.error(error_msg)
        raise ConfigError(error_msg)


def config_from_dict(data: Any, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    """Overlay a parsed JSON object on base (defaults when None).

    Raises:
        ConfigError: If a section or key is unknown or a value is invalid
    """
    if not isinstance(data, dict):
        raise ConfigError("Config root must be a JSON object")
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        error_msg = f"Unknown config sections: {unknown}"
        logger.error(error_msg)
        raise ConfigError(error_msg)
    cfg = base or ExperimentConfig()
    updates = {name: _section(name, getattr(cfg, name), values) for name, values in data.items()}
    return replace(cfg, **updates).validate()


def _preset(tokenizer_depth: int, tokenizer_width: int, codebook: int, token_blocks: int, task_blocks: int,
            d: int, n_shared: int, n_routed: int) -> Dict[str, Dict[str, Any]]:
    tokenizer = {"depth": tokenizer_depth, "width": tokenizer_width, "K": codebook}
    mapper = {"d": d, "n_token_blocks": token_blocks, "n_task_blocks": task_blocks, "n_shared": n_shared,
              "n_routed": n_routed, "task_n_shared": n_shared, "task_n_routed": n_routed, "expert_hidden": 2 * d}
    return {"tokenizer": tokenizer, "map_tokenizer": dict(tokenizer), "fusion": {"d": d}, "mapper": mapper}


PRESETS = {
    "small": _preset(2, 64, 64, 3, 1, 32, 2, 5),
    "base": _preset(4, 128, 128, 6, 2, 64, 3, 9),
    "large": _preset(8, 256, 512, 12, 4, 128, 5, 20),
}


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"Unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    return config_from_dict(PRESETS[name])


def load_config(path: Optional[Union[str, Path]] = None, preset_name: Optional[str] = None) -> ExperimentConfig:
    """Load a JSON config file on top of an optional preset.

    Raises:
        ConfigError: If the file cannot be read or parsed, or fails validation
    """
    cfg = preset(preset_name) if preset_name else ExperimentConfig().validate()
    if path is None:
        return cfg
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        error_msg = f"Cannot read config {path}: {e}"
        logger.error(error_msg)
        raise ConfigError(error_msg)
    logger.info(f"Loaded config {path}")
    return config_from_dict(data, cfg)


@dataclass(frozen=True)
class RuntimeSettings:
    """Process settings read from the environment."""
    device: str = "cpu"
    out_dir: Path = Path("runs")
    workers: int = 1
    debug: bool = False


def runtime_settings() -> RuntimeSettings:
    """Read PATHMAPS_DEVICE, PATHMAPS_OUT_DIR, PATHMAPS_WORKERS and DEBUG (after loading .env).

    Raises:
        ConfigError: If PATHMAPS_WORKERS is not a positive integer
    """
    load_dotenv()
    workers_raw = os.getenv("PATHMAPS_WORKERS", "1")
    try:
        workers = int(workers_raw)
    except ValueError:
        raise ConfigError(f"PATHMAPS_WORKERS must be an integer, got {workers_raw!r}")
    if workers < 1:
        raise ConfigError(f"PATHMAPS_WORKERS must be >= 1, got {workers}")
    return RuntimeSettings(
        device=os.getenv("PATHMAPS_DEVICE", "cpu"),
        out_dir=Path(os.getenv("PATHMAPS_OUT_DIR", "runs")),
        workers=workers,
        debug=os.getenv("DEBUG", "false").lower() == "true",
    )
