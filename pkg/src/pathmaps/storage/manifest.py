"""
Dataset manifest for pathmaps.

The manifest is a UTF-8 JSON document listing every snapshot with its
condition tags and the relative paths of its image, multipath maps and
validity mask.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

from .exceptions import SchemaError, StorageError
from .raster import atomic_write_bytes

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1

REQUIRED_ENTRY_KEYS = {
    "id": str,
    "scenario": str,
    "altitude_m": (int, float),
    "frequency_hz": (int, float),
    "image_path": str,
    "map_paths": dict,
    "mask_path": str,
    "path_index": int,
}
OPTIONAL_ENTRY_KEYS = {
    "dataset": str,
    "step": int,
    "embedding_path": str,
    "delay_span_s": (int, float),
}


@dataclass(frozen=True)
class ManifestEntry:
    """One snapshot row of the manifest.

    Attributes:
        id (str): Unique snapshot id
        scenario (str): Scenario family tag
        altitude_m (float): UAV altitude
        frequency_hz (float): Carrier frequency
        image_path (str): Sensing raster path, relative to the manifest
        map_paths (Dict[str, str]): Parameter name -> map raster path
        mask_path (str): Validity mask raster path
        path_index (int): 1-based path rank of the maps
        dataset (Optional[str]): Condition tag grouping snapshots into datasets
        step (Optional[int]): Trajectory step index
        embedding_path (Optional[str]): Precomputed semantic embedding raster
        delay_span_s (Optional[float]): Upper end of the delay normalization span, in seconds
    """
    id: str
    scenario: str
    altitude_m: float
    frequency_hz: float
    image_path: str
    map_paths: Dict[str, str]
    mask_path: str
    path_index: int = 1
    dataset: Optional[str] = None
    step: Optional[int] = None
    embedding_path: Optional[str] = None
    delay_span_s: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        data = {
            "id": self.id,
            "scenario": self.scenario,
            "altitude_m": self.altitude_m,
            "frequency_hz": self.frequency_hz,
            "image_path": self.image_path,
            "map_paths": dict(sorted(self.map_paths.items())),
            "mask_path": self.mask_path,
            "path_index": self.path_index,
        }
        for key in OPTIONAL_ENTRY_KEYS:
            value = getattr(self, key)
            if value is not None:
                data[key] = value
        return data

    @property
    def dataset_tag(self) -> str:
        return self.dataset or self.scenario


@dataclass
class DatasetManifest:
    """Enumeration of snapshots with their tags and file paths.

    Attributes:
        version (int): Manifest schema version
        seed (int): Scene seed the snapshots were synthesized from
        snapshots (List[ManifestEntry]): Snapshot rows
        root (Path): Directory that relative paths resolve against
    """
    version: int = MANIFEST_VERSION
    seed: int = 0
    snapshots: List[ManifestEntry] = field(default_factory=list)
    root: Path = field(default_factory=Path)

    def __len__(self) -> int:
        return len(self.snapshots)

    def resolve(self, relative: str) -> Path:
        return self.root / relative

    def to_dict(self) -> Dict[str, Any]:
        return {
            "version": self.version,
            "seed": self.seed,
            "snapshots": [s.to_dict() for s in self.snapshots],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def datasets(self) -> List[str]:
        return sorted({s.dataset_tag for s in self.snapshots})

    def params(self) -> List[str]:
        """Parameters present in every snapshot."""
        if not self.snapshots:
            return []
        common = set(self.snapshots[0].map_paths)
        for entry in self.snapshots[1:]:
            common &= set(entry.map_paths)
        return sorted(common)

    def select(self, ids: Optional[Iterable[str]] = None, datasets: Optional[Iterable[str]] = None,
               frequencies: Optional[Iterable[float]] = None, altitudes: Optional[Iterable[float]] = None,
               path_indices: Optional[Iterable[int]] = None) -> "DatasetManifest":
        """Return a manifest restricted to the matching snapshots (None means no filter)."""
        id_set = set(ids) if ids is not None else None
        ds_set = set(datasets) if datasets is not None else None
        f_set = {float(f) for f in frequencies} if frequencies is not None else None
        h_set = {float(h) for h in altitudes} if altitudes is not None else None
        p_set = set(path_indices) if path_indices is not None else None
        kept = [
            s for s in self.snapshots
            if (id_set is None or s.id in id_set)
            and (ds_set is None or s.dataset_tag in ds_set)
            and (f_set is None or float(s.frequency_hz) in f_set)
            and (h_set is None or float(s.altitude_m) in h_set)
            and (p_set is None or s.path_index in p_set)
        ]
        return DatasetManifest(version=self.version, seed=self.seed, snapshots=kept, root=self.root)


def _entry_from_dict(raw: Any, position: int) -> ManifestEntry:
    if not isinstance(raw, dict):
        raise SchemaError(f"Snapshot #{position} is not an object")
    missing = [k for k in REQUIRED_ENTRY_KEYS if k not in raw]
    if missing:
        raise SchemaError(f"Snapshot #{position} is missing key(s): {', '.join(missing)}")
    unknown = [k for k in raw if k not in REQUIRED_ENTRY_KEYS and k not in OPTIONAL_ENTRY_KEYS]
    if unknown:
        raise SchemaError(f"Snapshot #{position} has unknown key(s): {', '.join(sorted(unknown))}")
    for key, expected in {**REQUIRED_ENTRY_KEYS, **OPTIONAL_ENTRY_KEYS}.items():
        if key in raw and (not isinstance(raw[key], expected) or isinstance(raw[key], bool)):
            raise SchemaError(f"Snapshot #{position} key '{key}' has type {type(raw[key]).__name__}")
    if not all(isinstance(k, str) and isinstance(v, str) for k, v in raw["map_paths"].items()):
        raise SchemaError(f"Snapshot #{position} map_paths must map names to paths")
    if raw["path_index"] < 1:
        raise SchemaError(f"Snapshot #{position} has path_index {raw['path_index']} < 1")
    if raw["frequency_hz"] <= 0 or raw["altitude_m"] <= 0:
        raise SchemaError(f"Snapshot #{position} has a non-positive frequency or altitude")
    if "delay_span_s" in raw and raw["delay_span_s"] <= 0:
        raise SchemaError(f"Snapshot #{position} has a non-positive delay_span_s")
    return ManifestEntry(
        id=raw["id"],
        scenario=raw["scenario"],
        altitude_m=float(raw["altitude_m"]),
        frequency_hz=float(raw["frequency_hz"]),
        image_path=raw["image_path"],
        map_paths=dict(raw["map_paths"]),
        mask_path=raw["mask_path"],
        path_index=raw["path_index"],
        dataset=raw.get("dataset"),
        step=raw.get("step"),
        embedding_path=raw.get("embedding_path"),
        delay_span_s=float(raw["delay_span_s"]) if "delay_span_s" in raw else None,
    )


def manifest_from_dict(data: Any, root: Union[str, Path] = ".") -> DatasetManifest:
    """Validate a decoded manifest document.

    Raises:
        SchemaError: On any schema violation, with the offending key named
    """
    try:
        if not isinstance(data, dict):
            raise SchemaError("Manifest root must be an object")
        for key in ("version", "seed", "snapshots"):
            if key not in data:
                raise SchemaError(f"Manifest is missing '{key}'")
        extra = set(data) - {"version", "seed", "snapshots"}
        if extra:
            raise SchemaError(f"Manifest has unknown key(s): {', '.join(sorted(extra))}")
        if data["version"] != MANIFEST_VERSION:
            raise SchemaError(f"Unsupported manifest version {data['version']}")
        if not isinstance(data["seed"], int) or not isinstance(data["snapshots"], list):
            raise SchemaError("Manifest seed must be an integer and snapshots a list")
        entries = [_entry_from_dict(raw, i) for i, raw in enumerate(data["snapshots"])]
        ids = [e.id for e in entries]
        if len(set(ids)) != len(ids):
            raise SchemaError("Manifest snapshot ids are not unique")
    except SchemaError as e:
        logger.error(f"Invalid manifest: {e.message}")
        raise
    return DatasetManifest(version=data["version"], seed=data["seed"], snapshots=entries, root=Path(root))


def read_manifest(path: Union[str, Path]) -> DatasetManifest:
    """Read and validate a manifest file (or a directory holding manifest.json).

    Raises:
        StorageError: If the file cannot be read
        SchemaError: If the document is not valid JSON or violates the schema
    """
    target = Path(path)
    if target.is_dir():
        target = target / MANIFEST_NAME
    try:
        text = target.read_text(encoding="utf-8")
    except OSError as e:
        error_msg = f"Failed to read manifest {target}: {str(e)}"
        logger.error(error_msg)
        raise StorageError(error_msg)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        error_msg = f"Manifest {target} is not valid JSON: {str(e)}"
        logger.error(error_msg)
        raise SchemaError(error_msg)
    manifest = manifest_from_dict(data, root=target.parent)
    logger.info(f"Loaded manifest {target} with {len(manifest)} snapshots")
    return manifest


def write_manifest(manifest: DatasetManifest, out_dir: Union[str, Path]) -> Path:
    """Write manifest.json (sorted keys, stable indentation) into out_dir."""
    path = atomic_write_bytes(Path(out_dir) / MANIFEST_NAME, manifest.to_json().encode("utf-8"))
    logger.info(f"Wrote manifest {path} with {len(manifest)} snapshots")
    return path
