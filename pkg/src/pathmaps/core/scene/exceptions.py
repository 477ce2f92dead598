"""
Scene synthesis exceptions for pathmaps.

This module defines all exceptions raised while building scenes, rendering
sensing images, tracing links and rasterizing multipath maps.
"""

from ...exceptions import PathmapsError


class SceneError(PathmapsError):
    """Base exception for scene-synthesis errors."""
    code = "scene-error"


class InvalidGeometryError(SceneError):
    """Exception raised when a scene primitive violates its invariants."""
    code = "invalid-geometry"


class InvalidPoseError(SceneError):
    """Exception raised when a UAV pose is not usable for a scene."""
    code = "invalid-pose"


class FootprintOutOfSceneError(SceneError):
    """Exception raised when the camera footprint leaves the scene bounds."""
    code = "footprint-out-of-scene"


class DegenerateLinkError(SceneError):
    """Exception raised when a receiver point coincides with the transmitter."""
    code = "degenerate-link"


class UnknownParamError(SceneError):
    """Exception raised for a multipath parameter name that does not exist."""
    code = "unknown-param"


class TrajectoryError(SceneError):
    """Exception raised when a trajectory cannot be swept."""
    code = "bad-trajectory"
