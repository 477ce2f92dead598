"""
Multipath map rasterization for pathmaps.

This module turns per-cell path records into normalized per-parameter rasters
with an explicit validity mask, and holds the normalization record needed to
map raster values back to physical units.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .exceptions import SceneError, UnknownParamError
from .geometry import SPEED_OF_LIGHT, UavPose, footprint_side
from .tracing import CellPaths

logger = logging.getLogger(__name__)

MULTIPATH_PARAMS = ("power", "delay", "aod_az", "aod_el", "aoa_az", "aoa_el")

POWER_RANGE_DB = (-160.0, -60.0)
AZIMUTH_RANGE_DEG = (-180.0, 180.0)
ELEVATION_RANGE_DEG = (-90.0, 90.0)

_RECORD_FIELD = {
    "power": "power_db",
    "delay": "delay_s",
    "aod_az": "aod_az_deg",
    "aod_el": "aod_el_deg",
    "aoa_az": "aoa_az_deg",
    "aoa_el": "aoa_el_deg",
}


def check_params(params: Sequence[str]) -> List[str]:
    """Validate parameter names.

    Raises:
        UnknownParamError: If a name is not a known multipath parameter
    """
    unknown = [p for p in params if p not in MULTIPATH_PARAMS]
    if unknown:
        error_msg = f"Unknown multipath parameter(s): {', '.join(unknown)}"
        logger.error(error_msg)
        raise UnknownParamError(error_msg)
    return list(params)


def max_delay_s(pose: UavPose) -> float:
    """Nominal delay normalization span: (footprint diagonal + 2 * altitude) / c."""
    return (math.sqrt(2.0) * footprint_side(pose) + 2.0 * pose.altitude) / SPEED_OF_LIGHT


def longest_delay_s(paths: List[List[CellPaths]]) -> float:
    return max((r.delay_s for row in paths for cell in row for r in cell), default=0.0)


def normalization_ranges(pose: UavPose, params: Sequence[str],
                         longest_delay: float = 0.0) -> Dict[str, Tuple[float, float]]:
    """Per-parameter (min, max) spans.

    The delay span is the nominal span of the pose, widened to longest_delay when
    a traced path is longer so that no admitted delay is clipped.
    """
    ranges = {}
    for name in check_params(params):
        if name == "power":
            ranges[name] = POWER_RANGE_DB
        elif name == "delay":
            ranges[name] = (0.0, max(max_delay_s(pose), longest_delay))
        elif name.endswith("_az"):
            ranges[name] = AZIMUTH_RANGE_DEG
        else:
            ranges[name] = ELEVATION_RANGE_DEG
    return ranges


def normalize(values: np.ndarray, span: Tuple[float, float]) -> np.ndarray:
    lo, hi = span
    return np.clip((values - lo) / (hi - lo), 0.0, 1.0)


def denormalize(values: np.ndarray, span: Tuple[float, float]) -> np.ndarray:
    lo, hi = span
    return lo + values * (hi - lo)


@dataclass
class MultipathMapSet:
    """Normalized multipath rasters for one path index of one snapshot.

    Attributes:
        maps (Dict[str, np.ndarray]): Parameter name -> (H_M, W_M) float64 raster in [0, 1]
        valid_mask (np.ndarray): (H_M, W_M) boolean raster, False where no path exists
        path_index (int): 1-based path rank (1 = strongest)
        frequency_hz (float): Carrier frequency
        normalization (Dict[str, Tuple[float, float]]): (min, max) per parameter
    """
    maps: Dict[str, np.ndarray]
    valid_mask: np.ndarray
    path_index: int
    frequency_hz: float
    normalization: Dict[str, Tuple[float, float]] = field(default_factory=dict)

    def physical(self, param: str) -> np.ndarray:
        """Denormalized raster of one parameter (invalid cells hold the range minimum)."""
        if param not in self.maps:
            raise UnknownParamError(f"Parameter {param} not in map set")
        return denormalize(self.maps[param], self.normalization[param])


def rasterize_maps(paths: List[List[CellPaths]], path_index: int, params: Sequence[str],
                   frequency_hz: float, pose: UavPose) -> MultipathMapSet:
    """Select the path_index-th strongest record per cell and normalize it.

    The delay span covers every record in paths, so all path indices of one
    pose share it.

    Args:
        paths (List[List[CellPaths]]): Output of trace_links
        path_index (int): 1-based rank of the path to rasterize
        params (Sequence[str]): Subset of MULTIPATH_PARAMS
        frequency_hz (float): Carrier frequency the paths were traced at
        pose (UavPose): Snapshot pose (drives the delay normalization)

    Returns:
        MultipathMapSet: Rasters with invalid cells set to exactly 0

    Raises:
        UnknownParamError: If a parameter name is unknown
        SceneError: If path_index < 1
    """
    if path_index < 1:
        raise SceneError(f"path_index must be >= 1: {path_index}")
    params = check_params(params)
    ranges = normalization_ranges(pose, params, longest_delay_s(paths))
    if "delay" in ranges and ranges["delay"][1] > max_delay_s(pose):
        logger.debug(f"Delay span widened to {ranges['delay'][1]:.4g} s for a pose at altitude {pose.altitude:g} m")

    height = len(paths)
    width = len(paths[0]) if height else 0
    valid = np.zeros((height, width), dtype=bool)
    raw = {p: np.zeros((height, width), dtype=np.float64) for p in params}
    for i, row in enumerate(paths):
        for j, cell in enumerate(row):
            if len(cell) < path_index:
                continue
            record = cell[path_index - 1]
            valid[i, j] = True
            for p in params:
                raw[p][i, j] = getattr(record, _RECORD_FIELD[p])

    maps = {}
    for p in params:
        normalized = normalize(raw[p], ranges[p])
        maps[p] = np.where(valid, normalized, 0.0)

    logger.debug(f"Rasterized path {path_index}: {int(valid.sum())}/{valid.size} valid cells")
    return MultipathMapSet(
        maps=maps,
        valid_mask=valid,
        path_index=path_index,
        frequency_hz=float(frequency_hz),
        normalization=ranges,
    )
