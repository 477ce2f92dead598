import numpy as np
import pytest
import torch

from pathmaps.core.fusion import FusionConfig
from pathmaps.core.mapper import MapperConfig
from pathmaps.core.model import PathMapModel
from pathmaps.core.tokenizer import TokenizerConfig
from pathmaps.storage import DatasetManifest, ManifestEntry, write_raster

IMAGE_CFG = TokenizerConfig(depth=1, width=16, heads=2, patch_size=8, K=8, n_z=4, channels=3)
MAP_CFG = TokenizerConfig(depth=1, width=16, heads=2, patch_size=4, K=8, n_z=4, channels=1)
TOY_TASKS = ("power", "delay")
IMAGE_SIZE = 16
MAP_SIZE = 8


def toy_mapper_config(tasks=TOY_TASKS, **overrides):
    fields = dict(d=16, heads=2, n_token_blocks=1, n_task_blocks=1, n_shared=1, n_routed=3, top_k=2,
                  task_n_shared=1, task_n_routed=3, task_top_k=2, expert_hidden=16, tasks=tuple(tasks))
    fields.update(overrides)
    return MapperConfig(**fields)


def build_toy_model(tasks=TOY_TASKS, alpha=0.0, seed=0, dtype=torch.float32, **mapper_overrides):
    torch.manual_seed(seed)
    mapper_cfg = toy_mapper_config(tasks, **mapper_overrides)
    model = PathMapModel.build(IMAGE_CFG, MAP_CFG, FusionConfig(alpha=alpha, d=16), mapper_cfg, MAP_SIZE)
    return model.to(dtype)


def write_toy_manifest(root, n=8, tasks=TOY_TASKS, frequencies=(28e9,), path_indices=(1,), dataset="toy", seed=0):
    """Snapshots whose maps are block means of image channels, so they are learnable from the image."""
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(n):
        image = rng.random((IMAGE_SIZE, IMAGE_SIZE, 3)).astype(np.float32)
        write_raster(root / f"images/{i}.f32r", image)
        pooled = image.reshape(MAP_SIZE, 2, MAP_SIZE, 2, 3).mean(axis=(1, 3))
        write_raster(root / f"maps/{i}/mask.f32r", np.ones((MAP_SIZE, MAP_SIZE)))
        for f_index, frequency in enumerate(frequencies):
            for path_index in path_indices:
                map_paths = {}
                for t_index, task in enumerate(tasks):
                    rel = f"maps/{i}/{task}_f{f_index}_p{path_index}.f32r"
                    value = pooled[:, :, t_index % 3] * (1.0 + 0.5 * f_index) / path_index
                    write_raster(root / rel, value)
                    map_paths[task] = rel
                entries.append(ManifestEntry(
                    id=f"{dataset}-{i}-f{f_index}-p{path_index}",
                    scenario="crossroad",
                    altitude_m=70.0,
                    frequency_hz=float(frequency),
                    image_path=f"images/{i}.f32r",
                    map_paths=map_paths,
                    mask_path=f"maps/{i}/mask.f32r",
                    path_index=path_index,
                    dataset=dataset,
                    step=i,
                ))
    return DatasetManifest(seed=seed, snapshots=entries, root=root)


@pytest.fixture
def toy_manifest(tmp_path):
    return write_toy_manifest(tmp_path)
