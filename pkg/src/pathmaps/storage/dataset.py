"""
Snapshot dataset for pathmaps.

Wraps a DatasetManifest as a torch Dataset yielding aligned image, per-task
map and mask tensors. Rasters are read lazily and cached per file.
"""

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
from torch.utils.data import Dataset

from .exceptions import IncompleteSnapshotError, StorageError
from .manifest import DatasetManifest, ManifestEntry
from .raster import read_raster

logger = logging.getLogger(__name__)


class SnapshotDataset(Dataset):
    """Torch view over manifest snapshots.

    Each item is a dict with ``image`` (3, H_I, W_I), ``maps`` (P, H_M, W_M)
    in task order, ``mask`` (H_M, W_M), ``frequency_hz``, ``altitude_m``,
    ``path_index``, ``id``, ``dataset`` and, when the manifest carries one,
    ``embedding`` (n_c, d_c).
    """

    def __init__(self, manifest: DatasetManifest, tasks: Sequence[str], dtype: torch.dtype = torch.float32,
                 cache: bool = True):
        """Initialize the dataset.

        Args:
            manifest (DatasetManifest): Snapshots to expose
            tasks (Sequence[str]): Map parameters stacked into ``maps``, in order
            dtype (torch.dtype, optional): Output dtype. Defaults to torch.float32.
            cache (bool, optional): Keep decoded rasters in memory. Defaults to True.

        Raises:
            StorageError: If the manifest is empty
            IncompleteSnapshotError: If a snapshot lacks a requested task map
        """
        if len(manifest) == 0:
            error_msg = "Dataset manifest has no snapshots"
            logger.error(error_msg)
            raise StorageError(error_msg)
        self.manifest = manifest
        self.tasks = list(tasks)
        self.dtype = dtype
        self.cache = cache
        self._rasters: Dict[str, np.ndarray] = {}
        for entry in manifest.snapshots:
            self._check_entry(entry)

    def _check_entry(self, entry: ManifestEntry) -> None:
        missing = [t for t in self.tasks if t not in entry.map_paths]
        if missing:
            error_msg = f"Snapshot {entry.id} has no map for task(s): {', '.join(missing)}"
            logger.error(error_msg)
            raise IncompleteSnapshotError(error_msg)

    def _raster(self, relative: str) -> np.ndarray:
        if relative in self._rasters:
            return self._rasters[relative]
        path = self.manifest.resolve(relative)
        if not path.is_file():
            error_msg = f"Snapshot raster {path} does not exist"
            logger.error(error_msg)
            raise IncompleteSnapshotError(error_msg)
        data = read_raster(path)
        if self.cache:
            self._rasters[relative] = data
        return data

    def __len__(self) -> int:
        return len(self.manifest.snapshots)

    @property
    def entries(self) -> List[ManifestEntry]:
        return self.manifest.snapshots

    def __getitem__(self, index: int) -> Dict[str, object]:
        entry = self.manifest.snapshots[index]
        image = torch.from_numpy(np.ascontiguousarray(self._raster(entry.image_path).transpose(2, 0, 1)))
        maps = torch.stack([torch.from_numpy(self._raster(entry.map_paths[t])[:, :, 0]) for t in self.tasks])
        mask = torch.from_numpy(self._raster(entry.mask_path)[:, :, 0] > 0.5)
        item = {
            "image": image.to(self.dtype),
            "maps": maps.to(self.dtype),
            "mask": mask,
            "frequency_hz": torch.tensor(entry.frequency_hz, dtype=torch.float64),
            "altitude_m": torch.tensor(entry.altitude_m, dtype=torch.float64),
            "path_index": torch.tensor(entry.path_index, dtype=torch.long),
            "id": entry.id,
            "dataset": entry.dataset_tag,
        }
        if entry.embedding_path:
            item["embedding"] = torch.from_numpy(self._raster(entry.embedding_path)[:, :, 0]).to(self.dtype)
        return item

    def subset(self, ids: Sequence[str]) -> "SnapshotDataset":
        return SnapshotDataset(self.manifest.select(ids=ids), self.tasks, self.dtype, self.cache)


def collate_snapshots(items: List[Dict[str, object]]) -> Dict[str, object]:
    """Stack tensors, keep strings as lists; ``embedding`` only when every item has one."""
    batch: Dict[str, object] = {}
    for key in ("image", "maps", "mask", "frequency_hz", "altitude_m", "path_index"):
        batch[key] = torch.stack([item[key] for item in items])
    batch["id"] = [item["id"] for item in items]
    batch["dataset"] = [item["dataset"] for item in items]
    if all("embedding" in item for item in items):
        batch["embedding"] = torch.stack([item["embedding"] for item in items])
    return batch


def snapshot_loader(dataset: SnapshotDataset, batch_size: int, shuffle: bool,
                    seed: Optional[int] = None) -> torch.utils.data.DataLoader:
    generator = None
    if seed is not None:
        generator = torch.Generator()
        generator.manual_seed(seed)
    return torch.utils.data.DataLoader(
        dataset,
        batch_size=batch_size,
        shuffle=shuffle,
        generator=generator,
        collate_fn=collate_snapshots,
    )
