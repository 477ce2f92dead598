"""
Checkpoint container for pathmaps.

A checkpoint holds a config record, all parameter tensors, named freeze
scopes and every codebook as a raw blob: a little-endian (K, n_z) uint32
header followed by K * n_z little-endian float32 values.
"""

import hashlib
import io
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import torch

from .exceptions import SchemaError, StorageError, TruncatedFileError
from .raster import atomic_write_bytes

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "pathmaps-checkpoint"
CHECKPOINT_VERSION = 1
CODEBOOK_HEADER = struct.Struct("<II")


def codebook_to_bytes(entries: torch.Tensor) -> bytes:
    """Serialize a (K, n_z) codebook bit-exactly."""
    array = entries.detach().cpu().numpy()
    if array.ndim != 2:
        raise SchemaError(f"Codebook must be 2-D, got shape {tuple(array.shape)}")
    k, n_z = array.shape
    return CODEBOOK_HEADER.pack(k, n_z) + np.ascontiguousarray(array, dtype="<f4").tobytes()


def codebook_from_bytes(blob: bytes) -> torch.Tensor:
    """Parse a codebook blob into a float32 (K, n_z) tensor.

    Raises:
        TruncatedFileError: If the blob is shorter than its header announces
    """
    if len(blob) < CODEBOOK_HEADER.size:
        raise TruncatedFileError("Codebook blob shorter than its header")
    k, n_z = CODEBOOK_HEADER.unpack_from(blob, 0)
    expected = CODEBOOK_HEADER.size + 4 * k * n_z
    if len(blob) != expected:
        error_msg = f"Codebook blob holds {len(blob)} bytes, header announces {expected}"
        logger.error(error_msg)
        raise TruncatedFileError(error_msg)
    data = np.frombuffer(blob, dtype="<f4", offset=CODEBOOK_HEADER.size).reshape(k, n_z)
    return torch.from_numpy(data.astype(np.float32))


@dataclass
class Checkpoint:
    """Loaded checkpoint contents.

    Attributes:
        kind (str): What the checkpoint holds (e.g. "tokenizer", "model")
        config (Dict[str, Any]): Config record needed to rebuild the modules
        state_dict (Dict[str, torch.Tensor]): Parameter and buffer tensors
        codebooks (Dict[str, bytes]): Name -> raw codebook blob
        scopes (Dict[str, List[str]]): Named freeze scopes (lists of parameter names)
        metadata (Dict[str, Any]): Free-form run metadata (seed, epoch, ...)
    """
    kind: str
    config: Dict[str, Any]
    state_dict: Dict[str, torch.Tensor]
    codebooks: Dict[str, bytes] = field(default_factory=dict)
    scopes: Dict[str, List[str]] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def codebook(self, name: str) -> torch.Tensor:
        if name not in self.codebooks:
            raise SchemaError(f"Checkpoint has no codebook '{name}'")
        return codebook_from_bytes(self.codebooks[name])


def save_checkpoint(path: Union[str, Path], checkpoint: Checkpoint) -> Path:
    """Write a checkpoint atomically.

    Raises:
        StorageError: If the file cannot be written
    """
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": checkpoint.kind,
        "config": checkpoint.config,
        "state_dict": {k: v.detach().cpu() for k, v in checkpoint.state_dict.items()},
        "codebooks": {k: torch.frombuffer(bytearray(v), dtype=torch.uint8) for k, v in checkpoint.codebooks.items()},
        "scopes": checkpoint.scopes,
        "metadata": checkpoint.metadata,
    }
    buffer = io.BytesIO()
    torch.save(payload, buffer)
    target = atomic_write_bytes(path, buffer.getvalue())
    logger.info(f"Saved {checkpoint.kind} checkpoint to {target}")
    return target


def load_checkpoint(path: Union[str, Path], map_location: Optional[str] = "cpu") -> Checkpoint:
    """Read a checkpoint written by save_checkpoint.

    Raises:
        StorageError: If the file cannot be read
        SchemaError: If the container is not a pathmaps checkpoint
    """
    try:
        payload = torch.load(Path(path), map_location=map_location, weights_only=True)
    except OSError as e:
        error_msg = f"Failed to read checkpoint {path}: {str(e)}"
        logger.error(error_msg)
        raise StorageError(error_msg)
    except Exception as e:
        error_msg = f"Checkpoint {path} cannot be decoded: {str(e)}"
        logger.error(error_msg)
        raise SchemaError(error_msg)

    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        error_msg = f"{path} is not a pathmaps checkpoint"
        logger.error(error_msg)
        raise SchemaError(error_msg)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise SchemaError(f"Unsupported checkpoint version {payload.get('version')}")

    return Checkpoint(
        kind=payload["kind"],
        config=payload["config"],
        state_dict=payload["state_dict"],
        codebooks={k: bytes(v.numpy().tobytes()) for k, v in payload.get("codebooks", {}).items()},
        scopes=payload.get("scopes", {}),
        metadata=payload.get("metadata", {}),
    )


def checkpoint_id(path: Union[str, Path]) -> str:
    """Stable id: file stem plus the first 12 hex digits of the content hash."""
    target = Path(path)
    try:
        digest = hashlib.sha256(target.read_bytes()).hexdigest()[:12]
    except OSError as e:
        raise StorageError(f"Failed to hash checkpoint {target}: {str(e)}")
    return f"{target.stem}-{digest}"
