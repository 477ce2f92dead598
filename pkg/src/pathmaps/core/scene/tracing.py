"""
Link tracing for pathmaps.

This module computes line-of-sight and first-order specular reflection paths
between the UAV transmitter and a grid of ground receivers using the image
method on building facades, with free-space path loss plus a fixed
per-bounce material loss.
"""

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from .exceptions import DegenerateLinkError, SceneError
from .geometry import (
    SPEED_OF_LIGHT,
    BoxArray,
    SceneSpec,
    UavPose,
    segments_blocked,
    validate_pose,
)

logger = logging.getLogger(__name__)

VERTICAL_TOLERANCE_DEG = 0.01
DEGENERATE_DISTANCE = 1e-9
FSPL_CONSTANT_DB = 20.0 * math.log10(4.0 * math.pi / SPEED_OF_LIGHT)


class PathKind(str, Enum):
    LOS = "los"
    REFLECTION = "reflection"


@dataclass(frozen=True)
class PathRecord:
    """One propagation path between the UAV and a ground receiver.

    Attributes:
        kind (PathKind): Line of sight or single reflection
        power_db (float): Received power relative to a 0 dB transmitter
        delay_s (float): Propagation delay, total geometric length over c
        aod_az_deg (float): Departure azimuth in [-180, 180)
        aod_el_deg (float): Departure elevation from the horizontal plane, positive upward
        aoa_az_deg (float): Arrival azimuth (direction from the receiver toward the last hop)
        aoa_el_deg (float): Arrival elevation
        bounce_point (Optional[Tuple[float, float, float]]): Specular point for reflections
        length_m (float): Total geometric path length
    """
    kind: PathKind
    power_db: float
    delay_s: float
    aod_az_deg: float
    aod_el_deg: float
    aoa_az_deg: float
    aoa_el_deg: float
    bounce_point: Optional[Tuple[float, float, float]] = None
    length_m: float = 0.0

    @property
    def bounces(self) -> int:
        return 0 if self.kind is PathKind.LOS else 1


CellPaths = List[PathRecord]


def fspl_db(distance_m, frequency_hz):
    """Free-space path loss 20log10(d) + 20log10(f) + 20log10(4 pi / c) in dB."""
    return 20.0 * np.log10(distance_m) + 20.0 * np.log10(frequency_hz) + FSPL_CONSTANT_DB


def direction_angles(vectors: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Azimuth in [-180, 180) and elevation in [-90, 90] of direction vectors (N, 3).

    Directions within VERTICAL_TOLERANCE_DEG of the vertical get azimuth 0.
    """
    horizontal = np.hypot(vectors[:, 0], vectors[:, 1])
    elevation = np.degrees(np.arctan2(vectors[:, 2], horizontal))
    azimuth = np.degrees(np.arctan2(vectors[:, 1], vectors[:, 0]))
    azimuth = np.where(azimuth >= 180.0, azimuth - 360.0, azimuth)
    vertical = (90.0 - np.abs(elevation)) <= VERTICAL_TOLERANCE_DEG
    azimuth = np.where(vertical, 0.0, azimuth)
    return azimuth, elevation


def _records(kind: PathKind, tx: np.ndarray, first_hop: np.ndarray, last_hop: np.ndarray,
             rx: np.ndarray, lengths: np.ndarray, frequency_hz: float, loss_db: float,
             bounce: Optional[np.ndarray]) -> List[PathRecord]:
    aod_az, aod_el = direction_angles(first_hop - tx)
    aoa_az, aoa_el = direction_angles(last_hop - rx)
    power = -fspl_db(lengths, frequency_hz) - loss_db
    delay = lengths / SPEED_OF_LIGHT
    out = []
    for k in range(lengths.shape[0]):
        out.append(PathRecord(
            kind=kind,
            power_db=float(power[k]),
            delay_s=float(delay[k]),
            aod_az_deg=float(aod_az[k]),
            aod_el_deg=float(aod_el[k]),
            aoa_az_deg=float(aoa_az[k]),
            aoa_el_deg=float(aoa_el[k]),
            bounce_point=None if bounce is None else tuple(float(v) for v in bounce[k]),
            length_m=float(lengths[k]),
        ))
    return out


def trace_links(scene: SceneSpec, pose: UavPose, grid: np.ndarray, frequency_hz: float,
                max_paths: int) -> List[List[CellPaths]]:
    """Trace LoS and first-order reflections from the UAV to every grid point.

    Every facade in the scene is a reflection candidate; a candidate survives when
    its specular point lies on the facade and neither leg is occluded.

    Args:
        scene (SceneSpec): Scene to trace in
        pose (UavPose): Transmitter position (camera pose)
        grid (np.ndarray): Receiver points, shape (H, W, 3), ground level z = 0
        frequency_hz (float): Carrier frequency, > 0
        max_paths (int): Records kept per cell, >= 1

    Returns:
        List[List[CellPaths]]: H x W nested lists of records sorted by descending power

    Raises:
        DegenerateLinkError: If a grid point coincides with the transmitter
        SceneError: If frequency or max_paths are out of range
    """
    if frequency_hz <= 0:
        raise SceneError(f"Frequency must be positive: {frequency_hz}")
    if max_paths < 1:
        raise SceneError(f"max_paths must be >= 1: {max_paths}")
    validate_pose(scene, pose)

    height, width = grid.shape[:2]
    rx = grid.reshape(-1, 3).astype(np.float64)
    tx = pose.position
    n = rx.shape[0]

    los_vec = rx - tx[None, :]
    los_len = np.linalg.norm(los_vec, axis=1)
    if np.any(los_len < DEGENERATE_DISTANCE):
        error_msg = f"Receiver coincides with transmitter at {tx.tolist()}"
        logger.error(error_msg)
        raise DegenerateLinkError(error_msg)

    occluders = BoxArray.from_scene(scene)
    tx_all = np.broadcast_to(tx, rx.shape)
    cells: List[CellPaths] = [[] for _ in range(n)]

    visible = ~_blocked(tx_all, rx, occluders)
    idx = np.nonzero(visible)[0]
    if idx.size:
        recs = _records(PathKind.LOS, tx, rx[idx], tx_all[idx], rx[idx], los_len[idx],
                        frequency_hz, 0.0, None)
        for cell, rec in zip(idx, recs):
            cells[cell].append(rec)

    for building in scene.buildings:
        for facade in building.facades():
            normal, origin = facade.normal, facade.origin
            tx_side = float(np.dot(tx - origin, normal))
            if tx_side <= 0.0:
                continue
            rx_side = (rx - origin[None, :]) @ normal
            candidates = np.nonzero(rx_side > 0.0)[0]
            if candidates.size == 0:
                continue
            image = tx - 2.0 * tx_side * normal
            rx_c = rx[candidates]
            image_side = -tx_side
            t = image_side / (image_side - rx_side[candidates])
            bounce = image[None, :] + t[:, None] * (rx_c - image[None, :])
            along = (bounce - origin[None, :]) @ facade.tangent
            inside = (np.abs(along) <= facade.half_width) & (bounce[:, 2] >= 0.0) & (bounce[:, 2] <= facade.height)
            if not np.any(inside):
                continue
            keep = candidates[inside]
            bounce = bounce[inside]
            rx_k = rx[keep]
            tx_k = np.broadcast_to(tx, bounce.shape)
            clear = ~(_blocked(tx_k, bounce, occluders) | _blocked(bounce, rx_k, occluders))
            if not np.any(clear):
                continue
            keep, bounce, rx_k = keep[clear], bounce[clear], rx_k[clear]
            lengths = np.linalg.norm(rx_k - image[None, :], axis=1)
            recs = _records(PathKind.REFLECTION, tx, bounce, bounce, rx_k, lengths,
                            frequency_hz, scene.material_loss_db, bounce)
            for cell, rec in zip(keep, recs):
                cells[cell].append(rec)

    for k in range(n):
        cells[k].sort(key=lambda r: (-r.power_db, r.delay_s))
        del cells[k][max_paths:]

    valid = sum(1 for c in cells if c)
    logger.debug(f"Traced {n} links at {frequency_hz:.3g} Hz: {valid} cells with paths")
    return [cells[r * width:(r + 1) * width] for r in range(height)]


def _blocked(p0: np.ndarray, p1: np.ndarray, boxes: BoxArray) -> np.ndarray:
    """Chunked segments_blocked bounding the (N, B) working set."""
    n = p0.shape[0]
    if len(boxes) == 0 or n == 0:
        return np.zeros(n, dtype=bool)
    chunk = max(1, 2_000_000 // max(1, len(boxes)))
    if n <= chunk:
        return segments_blocked(p0, p1, boxes)
    parts = [segments_blocked(p0[i:i + chunk], p1[i:i + chunk], boxes) for i in range(0, n, chunk)]
    return np.concatenate(parts)


def retune_paths(paths: List[List[CellPaths]], from_hz: float, to_hz: float) -> List[List[CellPaths]]:
    """Re-express traced paths at another carrier frequency.

    Only power changes, by -20 log10(to/from); record order is preserved
    because the offset is the same for every path.
    """
    if from_hz <= 0 or to_hz <= 0:
        raise SceneError(f"Frequencies must be positive: {from_hz}, {to_hz}")
    offset = -20.0 * math.log10(to_hz / from_hz)
    return [[[replace(r, power_db=r.power_db + offset) for r in cell] for cell in row] for row in paths]
