"""
CSV logs for pathmaps: loss curves and MoE gate logs.
"""

import csv
import io
import logging
from dataclasses import astuple, dataclass
from pathlib import Path
from typing import Iterable, List, Union

from .exceptions import SchemaError, StorageError
from .raster import atomic_write_bytes

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ("epoch", "component", "value")
GATE_COLUMNS = ("block", "token_or_task", "expert_index", "gate_value", "frequency_hz")


@dataclass(frozen=True)
class CurvePoint:
    epoch: int
    component: str
    value: float


@dataclass(frozen=True)
class GateRecord:
    """One nonzero (or dense) gate value observed during a forward pass."""
    block: str
    token_or_task: str
    expert_index: int
    gate_value: float
    frequency_hz: float


def _rows_to_csv(header: Iterable[str], rows: Iterable[tuple]) -> bytes:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buffer.getvalue().encode("utf-8")


def write_csv(path: Union[str, Path], header: Iterable[str], rows: Iterable[tuple]) -> Path:
    """Write rows atomically; floats are written with repr so they read back exactly."""
    return atomic_write_bytes(path, _rows_to_csv(header, rows))


def write_curves(path: Union[str, Path], points: Iterable[CurvePoint]) -> Path:
    points = list(points)
    target = write_csv(path, CURVE_COLUMNS, (astuple(p) for p in points))
    logger.debug(f"Wrote {len(points)} curve points to {target}")
    return target


def read_curves(path: Union[str, Path]) -> List[CurvePoint]:
    """Read a loss-curve CSV.

    Raises:
        StorageError: If the file cannot be read
        SchemaError: If the header or a row is malformed
    """
    try:
        with open(path, newline="", encoding="utf-8") as handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            if tuple(header or ()) != CURVE_COLUMNS:
                raise SchemaError(f"Curve file {path} has header {header}")
            return [CurvePoint(int(e), c, float(v)) for e, c, v in reader]
    except OSError as e:
        error_msg = f"Failed to read curves {path}: {str(e)}"
        logger.error(error_msg)
        raise StorageError(error_msg)
    except ValueError as e:
        error_msg = f"Malformed curve row in {path}: {str(e)}"
        logger.error(error_msg)
        raise SchemaError(error_msg)


def write_gate_log(path: Union[str, Path], records: Iterable[GateRecord]) -> Path:
    records = list(records)
    target = write_csv(path, GATE_COLUMNS, (astuple(r) for r in records))
    logger.debug(f"Wrote {len(records)} gate records to {target}")
    return target


def read_gate_log(path: Union[str, Path]) -> List[GateRecord]:
    try:
        with open(path, newline="", encoding="utf-8") as handle:
            reader = csv.DictReader(handle)
            if tuple(reader.fieldnames or ()) != GATE_COLUMNS:
                raise SchemaError(f"Gate log {path} has header {reader.fieldnames}")
            return [
                GateRecord(row["block"], row["token_or_task"], int(row["expert_index"]),
                           float(row["gate_value"]), float(row["frequency_hz"]))
                for row in reader
            ]
    except OSError as e:
        error_msg = f"Failed to read gate log {path}: {str(e)}"
        logger.error(error_msg)
        raise StorageError(error_msg)
