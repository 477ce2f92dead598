"""
Scene geometry for pathmaps.

This module holds the scene primitives (buildings, roads, vehicles), the UAV
pose, footprint helpers shared by the renderer and the receiver grid, and the
vectorized segment/box occlusion test used by the link tracer.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, List, Tuple

import numpy as np

from .exceptions import InvalidGeometryError, InvalidPoseError, FootprintOutOfSceneError

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299_792_458.0


class ScenarioKind(str, Enum):
    """Procedural scenario families."""
    CROSSROAD = "crossroad"
    WIDE_LANE = "wide_lane"


class VehicleClass(str, Enum):
    """Vehicle classes, each rendered with its own colour."""
    CAR = "car"
    BUS = "bus"
    TRUCK = "truck"


def _finite(*values: float) -> bool:
    return all(math.isfinite(v) for v in values)


@dataclass(frozen=True)
class Box:
    """Building block: footprint centred at (cx, cy), extents w (x) by l (y).

    Attributes:
        cx (float): Footprint centre x in metres
        cy (float): Footprint centre y in metres
        w (float): Extent along x before rotation
        l (float): Extent along y before rotation
        height (float): Roof height above ground
        yaw_deg (float): Rotation about the vertical axis
    """
    cx: float
    cy: float
    w: float
    l: float
    height: float
    yaw_deg: float = 0.0

    def __post_init__(self):
        if not _finite(self.cx, self.cy, self.w, self.l, self.height, self.yaw_deg):
            raise InvalidGeometryError(f"Non-finite box geometry: {self}")
        if self.w <= 0 or self.l <= 0 or self.height <= 0:
            raise InvalidGeometryError(f"Degenerate box footprint: {self}")

    def aabb(self) -> Tuple[float, float, float, float]:
        """Axis-aligned bounds (xmin, ymin, xmax, ymax) of the rotated footprint."""
        yaw = math.radians(self.yaw_deg)
        c, s = abs(math.cos(yaw)), abs(math.sin(yaw))
        hx = 0.5 * (self.w * c + self.l * s)
        hy = 0.5 * (self.w * s + self.l * c)
        return (self.cx - hx, self.cy - hy, self.cx + hx, self.cy + hy)

    def facades(self) -> List["Facade"]:
        """The four vertical facades, normals pointing outward."""
        yaw = math.radians(self.yaw_deg)
        ux = np.array([math.cos(yaw), math.sin(yaw), 0.0])
        uy = np.array([-math.sin(yaw), math.cos(yaw), 0.0])
        centre = np.array([self.cx, self.cy, 0.0])
        result = []
        for normal, tangent, offset, half_width in (
            (ux, uy, 0.5 * self.w, 0.5 * self.l),
            (-ux, uy, 0.5 * self.w, 0.5 * self.l),
            (uy, ux, 0.5 * self.l, 0.5 * self.w),
            (-uy, ux, 0.5 * self.l, 0.5 * self.w),
        ):
            result.append(Facade(
                origin=centre + normal * offset,
                normal=normal,
                tangent=tangent,
                half_width=half_width,
                height=self.height,
            ))
        return result


@dataclass(frozen=True)
class Road:
    """Axis-aligned road rectangle at ground level."""
    cx: float
    cy: float
    w: float
    l: float

    def __post_init__(self):
        if not _finite(self.cx, self.cy, self.w, self.l):
            raise InvalidGeometryError(f"Non-finite road geometry: {self}")
        if self.w <= 0 or self.l <= 0:
            raise InvalidGeometryError(f"Degenerate road rectangle: {self}")

    def aabb(self) -> Tuple[float, float, float, float]:
        return (self.cx - 0.5 * self.w, self.cy - 0.5 * self.l,
                self.cx + 0.5 * self.w, self.cy + 0.5 * self.l)


@dataclass(frozen=True)
class Vehicle:
    """Oriented vehicle box. Vehicles occlude links but do not reflect."""
    cx: float
    cy: float
    w: float
    l: float
    height: float
    yaw_deg: float = 0.0
    kind: VehicleClass = VehicleClass.CAR

    def __post_init__(self):
        if not _finite(self.cx, self.cy, self.w, self.l, self.height, self.yaw_deg):
            raise InvalidGeometryError(f"Non-finite vehicle geometry: {self}")
        if self.w <= 0 or self.l <= 0 or self.height <= 0:
            raise InvalidGeometryError(f"Degenerate vehicle box: {self}")
        object.__setattr__(self, "kind", VehicleClass(self.kind))

    def as_box(self) -> Box:
        return Box(self.cx, self.cy, self.w, self.l, self.height, self.yaw_deg)


@dataclass(frozen=True)
class Facade:
    """Vertical reflecting plane bounded by half_width along tangent and [0, height]."""
    origin: np.ndarray
    normal: np.ndarray
    tangent: np.ndarray
    half_width: float
    height: float


def _rects_overlap(a: Tuple[float, float, float, float], b: Tuple[float, float, float, float]) -> bool:
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


@dataclass(frozen=True)
class SceneSpec:
    """Procedural urban scene.

    Attributes:
        seed (int): Generator seed the scene was built from
        scenario_kind (ScenarioKind): Scenario family
        buildings (Tuple[Box, ...]): Reflecting, occluding building blocks
        roads (Tuple[Road, ...]): Ground-level road rectangles
        vehicles (Tuple[Vehicle, ...]): Occluding vehicles on the roads
        material_loss_db (float): Reflection loss applied per bounce
        bounds (Tuple[float, float, float, float]): Scene extent (xmin, ymin, xmax, ymax)
    """
    seed: int
    scenario_kind: ScenarioKind
    buildings: Tuple[Box, ...] = ()
    roads: Tuple[Road, ...] = ()
    vehicles: Tuple[Vehicle, ...] = ()
    material_loss_db: float = 6.0
    bounds: Tuple[float, float, float, float] = (-200.0, -200.0, 200.0, 200.0)

    def __post_init__(self):
        object.__setattr__(self, "scenario_kind", ScenarioKind(self.scenario_kind))
        object.__setattr__(self, "buildings", tuple(self.buildings))
        object.__setattr__(self, "roads", tuple(self.roads))
        object.__setattr__(self, "vehicles", tuple(self.vehicles))
        object.__setattr__(self, "bounds", tuple(float(b) for b in self.bounds))
        if not _finite(self.material_loss_db, *self.bounds):
            raise InvalidGeometryError("Non-finite scene parameters")
        if self.bounds[0] >= self.bounds[2] or self.bounds[1] >= self.bounds[3]:
            raise InvalidGeometryError(f"Empty scene bounds: {self.bounds}")
        for building in self.buildings:
            footprint = building.aabb()
            for road in self.roads:
                if _rects_overlap(footprint, road.aabb()):
                    raise InvalidGeometryError(f"Building {building} overlaps road {road}")

    @property
    def max_building_height(self) -> float:
        return max((b.height for b in self.buildings), default=0.0)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["scenario_kind"] = self.scenario_kind.value
        data["vehicles"] = [dict(v, kind=VehicleClass(v["kind"]).value) for v in data["vehicles"]]
        data["bounds"] = list(self.bounds)
        return data

    def to_json(self) -> str:
        """Deterministic serialization (sorted keys, fixed separators)."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SceneSpec":
        return cls(
            seed=int(data["seed"]),
            scenario_kind=ScenarioKind(data["scenario_kind"]),
            buildings=tuple(Box(**b) for b in data.get("buildings", [])),
            roads=tuple(Road(**r) for r in data.get("roads", [])),
            vehicles=tuple(Vehicle(**v) for v in data.get("vehicles", [])),
            material_loss_db=float(data.get("material_loss_db", 6.0)),
            bounds=tuple(data.get("bounds", (-200.0, -200.0, 200.0, 200.0))),
        )


@dataclass(frozen=True)
class UavPose:
    """UAV transmitter / camera pose; the camera looks straight down."""
    x: float
    y: float
    altitude: float
    fov_deg: float = 60.0

    def __post_init__(self):
        if not _finite(self.x, self.y, self.altitude, self.fov_deg):
            raise InvalidPoseError(f"Non-finite pose: {self}")
        if self.altitude <= 0:
            raise InvalidPoseError(f"Altitude must be positive: {self.altitude}")
        if not 0.0 < self.fov_deg < 180.0:
            raise InvalidPoseError(f"Field of view out of (0, 180): {self.fov_deg}")

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.altitude], dtype=np.float64)


def footprint_side(pose: UavPose) -> float:
    """Side of the square ground footprint seen by the camera."""
    return 2.0 * pose.altitude * math.tan(math.radians(pose.fov_deg) / 2.0)


def footprint_bounds(pose: UavPose) -> Tuple[float, float, float, float]:
    half = 0.5 * footprint_side(pose)
    return (pose.x - half, pose.y - half, pose.x + half, pose.y + half)


def ground_cell_centers(pose: UavPose, height: int, width: int) -> np.ndarray:
    """Centres of an H x W grid tiling the footprint, shape (H, W, 3) at z = 0.

    Row 0 is the northern edge (largest y), column 0 the western edge.
    """
    side = footprint_side(pose)
    xs = pose.x - 0.5 * side + (np.arange(width) + 0.5) * side / width
    ys = pose.y + 0.5 * side - (np.arange(height) + 0.5) * side / height
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy, np.zeros_like(gx)], axis=-1)


def validate_pose(scene: SceneSpec, pose: UavPose) -> None:
    """Check that the footprint lies in the scene and the UAV clears every roof in it.

    Raises:
        FootprintOutOfSceneError: If the footprint exceeds the scene bounds
        InvalidPoseError: If a building in the footprint reaches the UAV altitude
    """
    fp = footprint_bounds(pose)
    xmin, ymin, xmax, ymax = scene.bounds
    tol = 1e-9
    if fp[0] < xmin - tol or fp[1] < ymin - tol or fp[2] > xmax + tol or fp[3] > ymax + tol:
        error_msg = f"Footprint {fp} exceeds scene bounds {scene.bounds}"
        logger.error(error_msg)
        raise FootprintOutOfSceneError(error_msg)
    for building in scene.buildings:
        if _rects_overlap(building.aabb(), fp) and building.height >= pose.altitude:
            error_msg = f"Building of height {building.height} m reaches UAV altitude {pose.altitude} m"
            logger.error(error_msg)
            raise InvalidPoseError(error_msg)


@dataclass
class BoxArray:
    """Structure-of-arrays view over boxes for vectorized slab tests."""
    cx: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cy: np.ndarray = field(default_factory=lambda: np.zeros(0))
    hx: np.ndarray = field(default_factory=lambda: np.zeros(0))
    hy: np.ndarray = field(default_factory=lambda: np.zeros(0))
    height: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cos: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sin: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def from_boxes(cls, boxes: List[Box]) -> "BoxArray":
        if not boxes:
            return cls()
        yaw = np.radians([b.yaw_deg for b in boxes])
        return cls(
            cx=np.array([b.cx for b in boxes], dtype=np.float64),
            cy=np.array([b.cy for b in boxes], dtype=np.float64),
            hx=np.array([0.5 * b.w for b in boxes], dtype=np.float64),
            hy=np.array([0.5 * b.l for b in boxes], dtype=np.float64),
            height=np.array([b.height for b in boxes], dtype=np.float64),
            cos=np.cos(yaw),
            sin=np.sin(yaw),
        )

    @classmethod
    def from_scene(cls, scene: SceneSpec) -> "BoxArray":
        return cls.from_boxes(list(scene.buildings) + [v.as_box() for v in scene.vehicles])

    def __len__(self) -> int:
        return int(self.cx.shape[0])

    def contains_xy(self, points: np.ndarray) -> np.ndarray:
        """Inclusive footprint membership, points (N, 2) -> (N, B) bool."""
        rx = points[:, None, 0] - self.cx[None, :]
        ry = points[:, None, 1] - self.cy[None, :]
        lx = self.cos[None, :] * rx + self.sin[None, :] * ry
        ly = -self.sin[None, :] * rx + self.cos[None, :] * ry
        return (np.abs(lx) <= self.hx[None, :]) & (np.abs(ly) <= self.hy[None, :])


def segments_blocked(p0: np.ndarray, p1: np.ndarray, boxes: BoxArray, eps: float = 1e-7) -> np.ndarray:
    """Whether each segment p0[i] -> p1[i] passes through the interior of any box.

    The open parameter interval (eps, 1 - eps) is tested, so segments that
    start or end on a facade (specular points) are not blocked by that facade.

    Args:
        p0 (np.ndarray): Segment starts, shape (N, 3)
        p1 (np.ndarray): Segment ends, shape (N, 3)
        boxes (BoxArray): Occluders
        eps (float): Parameter margin at both segment ends

    Returns:
        np.ndarray: Boolean array of shape (N,)
    """
    n = p0.shape[0]
    if n == 0 or len(boxes) == 0:
        return np.zeros(n, dtype=bool)
    d = p1 - p0
    c, s = boxes.cos[None, :], boxes.sin[None, :]
    rx = p0[:, None, 0] - boxes.cx[None, :]
    ry = p0[:, None, 1] - boxes.cy[None, :]
    ox = c * rx + s * ry
    oy = -s * rx + c * ry
    oz = np.broadcast_to(p0[:, None, 2], ox.shape)
    dx = c * d[:, None, 0] + s * d[:, None, 1]
    dy = -s * d[:, None, 0] + c * d[:, None, 1]
    dz = np.broadcast_to(d[:, None, 2], ox.shape)

    t_enter = np.full(ox.shape, eps)
    t_exit = np.full(ox.shape, 1.0 - eps)
    zeros = np.zeros_like(boxes.height)[None, :]
    for origin, direction, lo, hi in (
        (ox, dx, -boxes.hx[None, :], boxes.hx[None, :]),
        (oy, dy, -boxes.hy[None, :], boxes.hy[None, :]),
        (oz, dz, zeros, boxes.height[None, :]),
    ):
        parallel = direction == 0.0
        safe = np.where(parallel, 1.0, direction)
        t1 = (lo - origin) / safe
        t2 = (hi - origin) / safe
        near = np.minimum(t1, t2)
        far = np.maximum(t1, t2)
        inside = (origin >= lo) & (origin <= hi)
        near = np.where(parallel, np.where(inside, -np.inf, np.inf), near)
        far = np.where(parallel, np.where(inside, np.inf, -np.inf), far)
        t_enter = np.maximum(t_enter, near)
        t_exit = np.minimum(t_exit, far)
    return np.any(t_enter < t_exit, axis=1)
