"""
F32R raster files for pathmaps.

Layout: the magic bytes ``F32R``, three little-endian uint32 values
(height, width, channels), then row-major little-endian float32 samples.
"""

import logging
import os
import struct
import tempfile
from pathlib import Path
from typing import Union

import numpy as np

from .exceptions import BadMagicError, SchemaError, StorageError, TruncatedFileError

logger = logging.getLogger(__name__)

MAGIC = b"F32R"
HEADER = struct.Struct("<III")
HEADER_SIZE = len(MAGIC) + HEADER.size

PathLike = Union[str, Path]


def encode_raster(array: np.ndarray) -> bytes:
    """Serialize an (H, W) or (H, W, C) array to F32R bytes.

    Raises:
        SchemaError: If the array is not 2-D or 3-D
    """
    data = np.asarray(array)
    if data.ndim == 2:
        data = data[:, :, None]
    if data.ndim != 3:
        raise SchemaError(f"Raster must be 2-D or 3-D, got shape {data.shape}")
    height, width, channels = data.shape
    body = np.ascontiguousarray(data, dtype="<f4").tobytes()
    return MAGIC + HEADER.pack(height, width, channels) + body


def decode_raster(blob: bytes, source: str = "<bytes>") -> np.ndarray:
    """Parse F32R bytes into a float32 array of shape (H, W, C).

    Raises:
        BadMagicError: If the magic bytes are wrong
        TruncatedFileError: If the payload is shorter than the header announces
        SchemaError: If trailing bytes follow the payload
    """
    if len(blob) < len(MAGIC) or blob[:len(MAGIC)] != MAGIC:
        error_msg = f"Not an F32R raster: {source}"
        logger.error(error_msg)
        raise BadMagicError(error_msg)
    if len(blob) < HEADER_SIZE:
        error_msg = f"Raster header truncated: {source}"
        logger.error(error_msg)
        raise TruncatedFileError(error_msg)

    height, width, channels = HEADER.unpack_from(blob, len(MAGIC))
    expected = HEADER_SIZE + 4 * height * width * channels
    if len(blob) < expected:
        error_msg = f"Raster {source} holds {len(blob)} bytes, header announces {expected}"
        logger.error(error_msg)
        raise TruncatedFileError(error_msg)
    if len(blob) > expected:
        error_msg = f"Raster {source} has {len(blob) - expected} trailing bytes"
        logger.error(error_msg)
        raise SchemaError(error_msg)

    data = np.frombuffer(blob, dtype="<f4", count=height * width * channels, offset=HEADER_SIZE)
    return data.reshape(height, width, channels).astype(np.float32)


def atomic_write_bytes(path: PathLike, payload: bytes) -> Path:
    """Write payload to path through a sibling temp file and an atomic rename.

    Raises:
        StorageError: If the directory cannot be created or written
    """
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as handle:
                handle.write(payload)
            os.replace(tmp_name, target)
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise
    except OSError as e:
        error_msg = f"Failed to write {target}: {str(e)}"
        logger.error(error_msg)
        raise StorageError(error_msg)
    return target


def write_raster(path: PathLike, array: np.ndarray) -> Path:
    """Write an F32R raster atomically.

    Args:
        path (PathLike): Destination file
        array (np.ndarray): (H, W) or (H, W, C) samples, stored as float32

    Returns:
        Path: The written path
    """
    return atomic_write_bytes(path, encode_raster(array))


def read_raster(path: PathLike) -> np.ndarray:
    """Read an F32R raster as a float32 (H, W, C) array.

    Raises:
        StorageError: If the file cannot be read
        BadMagicError: If the file is not an F32R raster
        TruncatedFileError: If the file is shorter than announced
    """
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        error_msg = f"Failed to read raster {path}: {str(e)}"
        logger.error(error_msg)
        raise StorageError(error_msg)
    return decode_raster(blob, str(path))
