"""
Scene synthesis module for pathmaps.

This module builds procedural urban scenes, renders top-down sensing images,
traces UAV-to-ground links and rasterizes the resulting multipath maps along
UAV trajectories.
"""

from .exceptions import (
    SceneError,
    InvalidGeometryError,
    InvalidPoseError,
    FootprintOutOfSceneError,
    DegenerateLinkError,
    UnknownParamError,
    TrajectoryError
)
from .geometry import (
    SPEED_OF_LIGHT,
    Box,
    Road,
    Vehicle,
    VehicleClass,
    ScenarioKind,
    SceneSpec,
    UavPose,
    footprint_side,
    footprint_bounds,
    ground_cell_centers,
    validate_pose
)
from .builder import build_scene
from .render import render_topdown
from .tracing import PathKind, PathRecord, fspl_db, trace_links, retune_paths
from .maps import MULTIPATH_PARAMS, MultipathMapSet, rasterize_maps, normalization_ranges
from .sweep import (
    SynthConfig,
    Trajectory,
    Condition,
    Snapshot,
    condition_matrix,
    dataset_tag,
    synthesize_snapshots,
    sweep_trajectory,
    sweep_conditions
)

__all__ = [
    'SceneError',
    'InvalidGeometryError',
    'InvalidPoseError',
    'FootprintOutOfSceneError',
    'DegenerateLinkError',
    'UnknownParamError',
    'TrajectoryError',
    'SPEED_OF_LIGHT',
    'Box',
    'Road',
    'Vehicle',
    'VehicleClass',
    'ScenarioKind',
    'SceneSpec',
    'UavPose',
    'footprint_side',
    'footprint_bounds',
    'ground_cell_centers',
    'validate_pose',
    'build_scene',
    'render_topdown',
    'PathKind',
    'PathRecord',
    'fspl_db',
    'trace_links',
    'retune_paths',
    'MULTIPATH_PARAMS',
    'MultipathMapSet',
    'rasterize_maps',
    'normalization_ranges',
    'SynthConfig',
    'Trajectory',
    'Condition',
    'Snapshot',
    'condition_matrix',
    'dataset_tag',
    'synthesize_snapshots',
    'sweep_trajectory',
    'sweep_conditions'
]
