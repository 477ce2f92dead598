"""
Storage exceptions for pathmaps.

This module defines the typed IO errors raised for raster files, dataset
manifests, checkpoints and CSV logs.
"""

from ..exceptions import PathmapsError


class StorageError(PathmapsError):
    """Base exception for storage errors (unwritable directories, unreadable files)."""
    code = "storage-error"


class BadMagicError(StorageError):
    """Exception raised when a raster file does not start with the F32R magic."""
    code = "bad-magic"


class TruncatedFileError(StorageError):
    """Exception raised when a file is shorter than its header announces."""
    code = "truncated-file"


class SchemaError(StorageError):
    """Exception raised when a manifest or checkpoint violates its schema."""
    code = "schema-violation"


class IncompleteSnapshotError(StorageError):
    """Exception raised when a snapshot lacks a map required by the requested tasks."""
    code = "incomplete-snapshot"
