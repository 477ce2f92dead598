"""
Storage module for pathmaps.

This module provides the on-disk artifacts of the pipeline: F32R rasters,
the dataset manifest, checkpoints with bit-exact codebook blobs, CSV loss
curves and gate logs, and the torch snapshot dataset.
"""

from .exceptions import (
    StorageError,
    BadMagicError,
    TruncatedFileError,
    SchemaError,
    IncompleteSnapshotError
)
from .raster import write_raster, read_raster, encode_raster, decode_raster, atomic_write_bytes
from .manifest import (
    MANIFEST_NAME,
    DatasetManifest,
    ManifestEntry,
    read_manifest,
    write_manifest,
    manifest_from_dict
)
from .checkpoint import (
    Checkpoint,
    save_checkpoint,
    load_checkpoint,
    checkpoint_id,
    codebook_to_bytes,
    codebook_from_bytes
)
from .logs import (
    CurvePoint,
    GateRecord,
    write_csv,
    write_curves,
    read_curves,
    write_gate_log,
    read_gate_log
)
from .dataset import SnapshotDataset, collate_snapshots, snapshot_loader

__all__ = [
    'StorageError',
    'BadMagicError',
    'TruncatedFileError',
    'SchemaError',
    'IncompleteSnapshotError',
    'write_raster',
    'read_raster',
    'encode_raster',
    'decode_raster',
    'atomic_write_bytes',
    'MANIFEST_NAME',
    'DatasetManifest',
    'ManifestEntry',
    'read_manifest',
    'write_manifest',
    'manifest_from_dict',
    'Checkpoint',
    'save_checkpoint',
    'load_checkpoint',
    'checkpoint_id',
    'codebook_to_bytes',
    'codebook_from_bytes',
    'CurvePoint',
    'GateRecord',
    'write_csv',
    'write_curves',
    'read_curves',
    'write_gate_log',
    'read_gate_log',
    'SnapshotDataset',
    'collate_snapshots',
    'snapshot_loader'
]
