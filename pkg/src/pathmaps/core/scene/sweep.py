"""
Trajectory sweeps for pathmaps.

This module flies a UAV along a straight trajectory at several altitudes,
renders the sensing image and traces the multipath maps of every snapshot,
and writes the rasters plus a manifest describing the resulting datasets.
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ...storage import DatasetManifest, ManifestEntry, write_manifest, write_raster
from .exceptions import TrajectoryError
from .geometry import SceneSpec, ScenarioKind, UavPose, ground_cell_centers
from .maps import MULTIPATH_PARAMS, MultipathMapSet, check_params, rasterize_maps
from .render import render_topdown
from .tracing import retune_paths, trace_links

logger = logging.getLogger(__name__)

DEFAULT_FREQUENCIES_HZ = (1.6e9, 5.9e9, 15e9, 28e9)
CROSSROAD_ALTITUDES_M = (50.0, 70.0, 80.0)
WIDE_LANE_ALTITUDES_M = (200.0, 250.0, 300.0)
REFERENCE_FREQUENCY_HZ = 28e9

Embedder = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SynthConfig:
    """Snapshot synthesis settings.

    Attributes:
        image_size (int): Sensing raster side H_I = W_I
        map_size (int): Multipath raster side H_M = W_M (one receiver per cell)
        patch_size (int): Tokenizer patch size the rasters must divide into
        fov_deg (float): Camera field of view
        max_paths (int): Paths kept per receiver by the tracer
        n_paths (int): Path indices 1..n_paths rasterized per snapshot
        params (Tuple[str, ...]): Multipath parameters written per snapshot
        material_loss_db (float): Reflection loss per bounce
    """
    image_size: int = 64
    map_size: int = 32
    patch_size: int = 8
    fov_deg: float = 60.0
    max_paths: int = 6
    n_paths: int = 1
    params: Tuple[str, ...] = MULTIPATH_PARAMS
    material_loss_db: float = 6.0

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(check_params(self.params)))
        if not 1 <= self.n_paths <= self.max_paths:
            raise TrajectoryError(f"n_paths must lie in [1, max_paths]: {self.n_paths}")


@dataclass(frozen=True)
class Trajectory:
    """Straight flight from start to end advancing ``velocity`` metres per snapshot."""
    start: Tuple[float, float]
    end: Tuple[float, float]
    velocity: float

    @property
    def distance(self) -> float:
        return math.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1])

    def steps(self) -> int:
        """Snapshots per (altitude, frequency): floor(distance / |velocity|) + 1."""
        if self.velocity == 0 or not math.isfinite(self.velocity):
            raise TrajectoryError(f"Trajectory velocity must be nonzero and finite: {self.velocity}")
        return int(math.floor(self.distance / abs(self.velocity) + 1e-9)) + 1

    def positions(self) -> List[Tuple[float, float]]:
        n = self.steps()
        distance = self.distance
        if distance == 0:
            return [tuple(self.start)] * n
        ux = (self.end[0] - self.start[0]) / distance
        uy = (self.end[1] - self.start[1]) / distance
        step = abs(self.velocity)
        return [(self.start[0] + k * step * ux, self.start[1] + k * step * uy) for k in range(n)]


@dataclass(frozen=True)
class Condition:
    """One (scenario, frequency, altitude) dataset condition."""
    scenario: ScenarioKind
    frequency_hz: float
    altitude_m: float

    @property
    def tag(self) -> str:
        return dataset_tag(self.scenario, self.frequency_hz, self.altitude_m)


@dataclass
class Snapshot:
    """One aligned sample at a single UAV pose and frequency."""
    image: np.ndarray
    pose: UavPose
    frequency_hz: float
    map_sets: List[MultipathMapSet] = field(default_factory=list)
    tags: Dict[str, str] = field(default_factory=dict)


def dataset_tag(scenario: Union[str, ScenarioKind], frequency_hz: float, altitude_m: float) -> str:
    return f"{ScenarioKind(scenario).value}-{frequency_hz / 1e9:g}GHz-{altitude_m:g}m"


def condition_matrix(scenario: Union[str, ScenarioKind]) -> List[Condition]:
    """The six conditions of one scenario: an altitude sweep at 28 GHz plus a
    frequency sweep at the middle altitude."""
    kind = ScenarioKind(scenario)
    altitudes = CROSSROAD_ALTITUDES_M if kind is ScenarioKind.CROSSROAD else WIDE_LANE_ALTITUDES_M
    conditions = [Condition(kind, REFERENCE_FREQUENCY_HZ, h) for h in altitudes]
    for f in sorted((f for f in DEFAULT_FREQUENCIES_HZ if f != REFERENCE_FREQUENCY_HZ), reverse=True):
        conditions.append(Condition(kind, f, altitudes[1]))
    return conditions


def synthesize_snapshots(scene: SceneSpec, pose: UavPose, frequencies: Sequence[float],
                         cfg: SynthConfig = SynthConfig()) -> List[Snapshot]:
    """Render and trace one pose, producing one Snapshot per frequency.

    The geometry is traced once at the first frequency; the other frequencies
    reuse it through the analytic path-loss offset.
    """
    if not frequencies:
        raise TrajectoryError("At least one frequency is required")
    image = render_topdown(scene, pose, cfg.image_size, cfg.image_size, cfg.patch_size)
    grid = ground_cell_centers(pose, cfg.map_size, cfg.map_size)
    reference = float(frequencies[0])
    traced = trace_links(scene, pose, grid, reference, cfg.max_paths)

    snapshots = []
    for frequency in frequencies:
        paths = traced if frequency == reference else retune_paths(traced, reference, frequency)
        map_sets = [
            rasterize_maps(paths, k, cfg.params, frequency, pose)
            for k in range(1, cfg.n_paths + 1)
        ]
        snapshots.append(Snapshot(
            image=image,
            pose=pose,
            frequency_hz=float(frequency),
            map_sets=map_sets,
            tags={
                "scenario": scene.scenario_kind.value,
                "altitude": f"{pose.altitude:g}",
                "frequency": f"{frequency:g}",
                "dataset": dataset_tag(scene.scenario_kind, frequency, pose.altitude),
            },
        ))
    return snapshots


def _check_trajectory(scene: SceneSpec, trajectory: Trajectory) -> None:
    xmin, ymin, xmax, ymax = scene.bounds
    for x, y in (trajectory.start, trajectory.end):
        if not (xmin <= x <= xmax and ymin <= y <= ymax):
            error_msg = f"Trajectory endpoint ({x}, {y}) lies outside scene bounds {scene.bounds}"
            logger.error(error_msg)
            raise TrajectoryError(error_msg)
    trajectory.steps()


def _write_pose(scene: SceneSpec, step: int, xy: Tuple[float, float], altitude: float,
                frequencies: Sequence[float], out_dir: Path, cfg: SynthConfig,
                embedder: Optional[Embedder]) -> List[ManifestEntry]:
    kind = scene.scenario_kind.value
    pose = UavPose(xy[0], xy[1], altitude, cfg.fov_deg)
    pose_id = f"{kind}-s{scene.seed}-t{step:04d}-h{altitude:g}"
    snapshots = synthesize_snapshots(scene, pose, frequencies, cfg)

    image_path = f"images/{pose_id}.f32r"
    write_raster(out_dir / image_path, snapshots[0].image)
    embedding_path = None
    if embedder is not None:
        embedding_path = f"embeddings/{pose_id}.f32r"
        write_raster(out_dir / embedding_path, np.asarray(embedder(snapshots[0].image)))

    entries = []
    for snapshot in snapshots:
        for map_set in snapshot.map_sets:
            snap_id = f"{pose_id}-f{snapshot.frequency_hz / 1e9:g}-p{map_set.path_index}"
            map_paths = {}
            for param, raster in map_set.maps.items():
                map_paths[param] = f"maps/{snap_id}/{param}.f32r"
                write_raster(out_dir / map_paths[param], raster)
            mask_path = f"maps/{snap_id}/mask.f32r"
            write_raster(out_dir / mask_path, map_set.valid_mask.astype(np.float32))
            entries.append(ManifestEntry(
                id=snap_id,
                scenario=kind,
                altitude_m=float(altitude),
                frequency_hz=float(snapshot.frequency_hz),
                image_path=image_path,
                map_paths=map_paths,
                mask_path=mask_path,
                path_index=map_set.path_index,
                dataset=snapshot.tags["dataset"],
                step=step,
                embedding_path=embedding_path,
                delay_span_s=map_set.normalization["delay"][1] if "delay" in map_set.normalization else None,
            ))
    logger.debug(f"Wrote pose {pose_id}: {len(entries)} manifest entries")
    return entries


def _sweep(scene: SceneSpec, trajectory: Trajectory, plan: List[Tuple[float, List[float]]],
           out_dir: Union[str, Path], cfg: SynthConfig, workers: Optional[int],
           embedder: Optional[Embedder]) -> DatasetManifest:
    _check_trajectory(scene, trajectory)
    out = Path(out_dir)
    jobs = [(step, xy, altitude, freqs)
            for altitude, freqs in plan
            for step, xy in enumerate(trajectory.positions())]
    if workers is None:
        workers = int(os.getenv("PATHMAPS_WORKERS", "1"))
    logger.info(f"Sweeping {len(jobs)} poses of the {scene.scenario_kind.value} scene "
                f"(seed {scene.seed}) with {workers} worker(s)")

    def run(job):
        step, xy, altitude, freqs = job
        return _write_pose(scene, step, xy, altitude, freqs, out, cfg, embedder)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]

    manifest = DatasetManifest(
        seed=scene.seed,
        snapshots=[entry for entries in results for entry in entries],
        root=out,
    )
    write_manifest(manifest, out)
    return manifest


def sweep_trajectory(scene: SceneSpec, trajectory: Trajectory, altitudes: Sequence[float],
                     frequencies: Sequence[float], out_dir: Union[str, Path],
                     cfg: SynthConfig = SynthConfig(), workers: Optional[int] = None,
                     embedder: Optional[Embedder] = None) -> DatasetManifest:
    """Synthesize every (step, altitude, frequency) snapshot and write the manifest.

    Args:
        scene (SceneSpec): Scene to fly over
        trajectory (Trajectory): x-y path shared by every altitude
        altitudes (Sequence[float]): Flight altitudes in metres
        frequencies (Sequence[float]): Carrier frequencies in Hz
        out_dir (Union[str, Path]): Output root for rasters and manifest.json
        cfg (SynthConfig, optional): Raster and tracing settings
        workers (Optional[int], optional): Worker threads. Defaults to PATHMAPS_WORKERS or 1.
        embedder (Optional[Embedder], optional): Semantic provider whose output is stored per pose

    Returns:
        DatasetManifest: The written manifest

    Raises:
        TrajectoryError: If the velocity is zero or an endpoint lies outside the scene
        StorageError: If out_dir cannot be written
    """
    if not altitudes or not frequencies:
        raise TrajectoryError("At least one altitude and one frequency are required")
    plan = [(float(h), [float(f) for f in frequencies]) for h in altitudes]
    return _sweep(scene, trajectory, plan, out_dir, cfg, workers, embedder)


def sweep_conditions(scene: SceneSpec, trajectory: Trajectory, conditions: Sequence[Condition],
                     out_dir: Union[str, Path], cfg: SynthConfig = SynthConfig(),
                     workers: Optional[int] = None,
                     embedder: Optional[Embedder] = None) -> DatasetManifest:
    """Sweep an explicit condition list (e.g. condition_matrix) instead of a full product."""
    plan: Dict[float, List[float]] = {}
    for condition in conditions:
        if ScenarioKind(condition.scenario) is not scene.scenario_kind:
            raise TrajectoryError(f"Condition {condition.tag} does not match the scene scenario")
        freqs = plan.setdefault(float(condition.altitude_m), [])
        if float(condition.frequency_hz) not in freqs:
            freqs.append(float(condition.frequency_hz))
    if not plan:
        raise TrajectoryError("At least one condition is required")
    return _sweep(scene, trajectory, list(plan.items()), out_dir, cfg, workers, embedder)
