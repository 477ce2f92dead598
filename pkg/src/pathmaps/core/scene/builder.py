"""
Procedural scene builder for pathmaps.

This module generates the two urban scenario families: a crossroad with two
orthogonal roads and four building quadrants, and a wide lane with one wide
arterial road flanked by dense building rows.
"""

import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .geometry import Box, Road, SceneSpec, ScenarioKind, Vehicle, VehicleClass

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LayoutParams:
    """Density constants of one scenario family."""
    half_extent: float
    road_width: float
    lot_spacing: float
    occupancy: float
    footprint_range: Tuple[float, float]
    height_range: Tuple[float, float]
    vehicle_count: Tuple[int, int]
    heavy_vehicle_share: float


CROSSROAD_LAYOUT = LayoutParams(
    half_extent=200.0,
    road_width=24.0,
    lot_spacing=40.0,
    occupancy=0.55,
    footprint_range=(12.0, 26.0),
    height_range=(8.0, 40.0),
    vehicle_count=(4, 10),
    heavy_vehicle_share=0.1,
)

WIDE_LANE_LAYOUT = LayoutParams(
    half_extent=420.0,
    road_width=60.0,
    lot_spacing=24.0,
    occupancy=0.9,
    footprint_range=(10.0, 18.0),
    height_range=(15.0, 90.0),
    vehicle_count=(30, 50),
    heavy_vehicle_share=0.35,
)

VEHICLE_DIMENSIONS = {
    VehicleClass.CAR: (4.5, 1.9, 1.5),
    VehicleClass.BUS: (12.0, 2.6, 3.2),
    VehicleClass.TRUCK: (9.0, 2.5, 3.8),
}

ROAD_CLEARANCE = 3.0


def layout_for(kind: ScenarioKind) -> LayoutParams:
    return CROSSROAD_LAYOUT if ScenarioKind(kind) is ScenarioKind.CROSSROAD else WIDE_LANE_LAYOUT


def _roads(kind: ScenarioKind, layout: LayoutParams) -> List[Road]:
    span = 2.0 * layout.half_extent
    if kind is ScenarioKind.CROSSROAD:
        return [
            Road(cx=0.0, cy=0.0, w=span, l=layout.road_width),
            Road(cx=0.0, cy=0.0, w=layout.road_width, l=span),
        ]
    return [Road(cx=0.0, cy=0.0, w=span, l=layout.road_width)]


def _lot_centres(kind: ScenarioKind, layout: LayoutParams) -> List[Tuple[float, float]]:
    """Lot centres on a regular grid covering everything off the road corridors."""
    inner = 0.5 * layout.road_width + ROAD_CLEARANCE
    count = int((layout.half_extent - inner) // layout.lot_spacing)
    offsets = [inner + (k + 0.5) * layout.lot_spacing for k in range(count)]
    if kind is ScenarioKind.CROSSROAD:
        signed = [-o for o in reversed(offsets)] + offsets
        return [(x, y) for y in signed for x in signed]
    along = int((2.0 * layout.half_extent) // layout.lot_spacing)
    xs = [-layout.half_extent + (k + 0.5) * layout.lot_spacing for k in range(along)]
    ys = [-o for o in reversed(offsets)] + offsets
    return [(x, y) for y in ys for x in xs]


def _vehicles(kind: ScenarioKind, layout: LayoutParams, rng: np.random.Generator) -> List[Vehicle]:
    count = int(rng.integers(layout.vehicle_count[0], layout.vehicle_count[1] + 1))
    lanes = np.linspace(-0.35, 0.35, 4) * layout.road_width
    limit = layout.half_extent - 15.0
    vehicles = []
    for _ in range(count):
        kind_draw = rng.random()
        if kind_draw < layout.heavy_vehicle_share / 2:
            vclass = VehicleClass.BUS
        elif kind_draw < layout.heavy_vehicle_share:
            vclass = VehicleClass.TRUCK
        else:
            vclass = VehicleClass.CAR
        length, width, height = VEHICLE_DIMENSIONS[vclass]
        lane = float(rng.choice(lanes))
        along = float(rng.uniform(-limit, limit))
        on_vertical = kind is ScenarioKind.CROSSROAD and rng.random() < 0.5
        if on_vertical:
            vehicles.append(Vehicle(lane, along, length, width, height, yaw_deg=90.0, kind=vclass))
        else:
            vehicles.append(Vehicle(along, lane, length, width, height, yaw_deg=0.0, kind=vclass))
    return vehicles


def build_scene(seed: int, scenario_kind: ScenarioKind, material_loss_db: float = 6.0) -> SceneSpec:
    """Build a deterministic procedural scene.

    Args:
        seed (int): Non-negative generator seed
        scenario_kind (ScenarioKind): Scenario family
        material_loss_db (float, optional): Reflection loss per bounce. Defaults to 6.0.

    Returns:
        SceneSpec: Scene whose layout depends only on (seed, scenario_kind)

    Raises:
        ValueError: If the seed is negative
    """
    if seed < 0:
        raise ValueError(f"Scene seed must be non-negative: {seed}")
    kind = ScenarioKind(scenario_kind)
    layout = layout_for(kind)
    rng = np.random.default_rng([seed, 0 if kind is ScenarioKind.CROSSROAD else 1])

    roads = _roads(kind, layout)
    max_side = layout.lot_spacing - 2.0 * ROAD_CLEARANCE
    buildings = []
    for cx, cy in _lot_centres(kind, layout):
        if rng.random() >= layout.occupancy:
            continue
        w = float(min(rng.uniform(*layout.footprint_range), max_side))
        l = float(min(rng.uniform(*layout.footprint_range), max_side))
        jitter = 0.5 * (layout.lot_spacing - max(w, l)) - ROAD_CLEARANCE / 2
        jx = float(rng.uniform(-jitter, jitter)) if jitter > 0 else 0.0
        jy = float(rng.uniform(-jitter, jitter)) if jitter > 0 else 0.0
        height = float(rng.uniform(*layout.height_range))
        buildings.append(Box(cx=cx + jx, cy=cy + jy, w=w, l=l, height=height))

    scene = SceneSpec(
        seed=seed,
        scenario_kind=kind,
        buildings=tuple(buildings),
        roads=tuple(roads),
        vehicles=tuple(_vehicles(kind, layout, rng)),
        material_loss_db=material_loss_db,
        bounds=(-layout.half_extent, -layout.half_extent, layout.half_extent, layout.half_extent),
    )
    logger.debug(f"Built {kind.value} scene seed={seed}: {len(buildings)} buildings, "
                 f"{len(scene.vehicles)} vehicles")
    return scene
