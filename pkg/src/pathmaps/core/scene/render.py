"""
Top-down semantic rendering for pathmaps.

Each pixel takes the colour of the topmost occupant of its ground cell:
vehicles and buildings by height, then roads, then bare ground.
"""

import logging

import numpy as np

from .exceptions import SceneError
from .geometry import BoxArray, SceneSpec, UavPose, VehicleClass, ground_cell_centers, validate_pose

logger = logging.getLogger(__name__)

DEFAULT_PATCH_SIZE = 8

GROUND_COLOR = np.array([0.32, 0.52, 0.28])
ROAD_COLOR = np.array([0.50, 0.50, 0.50])
VEHICLE_COLORS = {
    VehicleClass.CAR: np.array([0.85, 0.15, 0.15]),
    VehicleClass.BUS: np.array([0.95, 0.80, 0.10]),
    VehicleClass.TRUCK: np.array([0.15, 0.30, 0.90]),
}
BUILDING_HEIGHT_SCALE = 100.0


def building_color(height: float) -> np.ndarray:
    """Roof colour keyed to height: darker brown for low, lighter for tall blocks."""
    level = min(max(height / BUILDING_HEIGHT_SCALE, 0.0), 1.0)
    return np.array([0.55 + 0.4 * level, 0.35 + 0.5 * level, 0.25 + 0.6 * level])


def render_topdown(scene: SceneSpec, pose: UavPose, height: int, width: int,
                   patch_size: int = DEFAULT_PATCH_SIZE) -> np.ndarray:
    """Render the orthographic semantic image of the camera footprint.

    Args:
        scene (SceneSpec): Scene to render
        pose (UavPose): Camera pose
        height (int): Image rows, a multiple of patch_size
        width (int): Image columns, a multiple of patch_size
        patch_size (int, optional): Tokenizer patch size. Defaults to 8.

    Returns:
        np.ndarray: (H, W, 3) float64 raster in [0, 1]

    Raises:
        FootprintOutOfSceneError: If the footprint exceeds the scene bounds
        SceneError: If the raster size is not patch-aligned
    """
    if height <= 0 or width <= 0 or height % patch_size or width % patch_size:
        raise SceneError(f"Raster size {height}x{width} is not a multiple of patch size {patch_size}")
    validate_pose(scene, pose)

    centres = ground_cell_centers(pose, height, width).reshape(-1, 3)[:, :2]
    image = np.broadcast_to(GROUND_COLOR, (centres.shape[0], 3)).copy()

    for road in scene.roads:
        xmin, ymin, xmax, ymax = road.aabb()
        on_road = (centres[:, 0] >= xmin) & (centres[:, 0] <= xmax) & (centres[:, 1] >= ymin) & (centres[:, 1] <= ymax)
        image[on_road] = ROAD_COLOR

    occupants = list(scene.buildings) + [v.as_box() for v in scene.vehicles]
    if occupants:
        colors = np.stack(
            [building_color(b.height) for b in scene.buildings]
            + [VEHICLE_COLORS[v.kind] for v in scene.vehicles]
        )
        boxes = BoxArray.from_boxes(occupants)
        inside = boxes.contains_xy(centres)
        heights = np.where(inside, boxes.height[None, :], -np.inf)
        top = np.argmax(heights, axis=1)
        covered = np.isfinite(heights[np.arange(heights.shape[0]), top])
        image[covered] = colors[top[covered]]

    return image.reshape(height, width, 3)
