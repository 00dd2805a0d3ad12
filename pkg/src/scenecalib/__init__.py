"""Two-stage multi-camera calibration from annotated scene geometry."""

from .distortion import DistortionModel, fit_distortion, undistort_point
from .errors import CalibrationError
from .model import (
    CameraIntrinsics,
    CameraModel,
    CameraPose,
    PixelPoint,
    WorldPoint,
    compose_rotation,
    project_pixel_to_world,
    project_world_to_pixel,
    projection_matrix,
)
from .stage1 import (
    AnnotationSet,
    FloorPolygon,
    PartialCalibration,
    evaluate_criterion,
    project_efov,
    solve_partial,
)
from .stage2 import (
    PlacementTransform,
    PrismOverlay,
    VirtualMarker,
    apply_placement,
    assemble_full_calibration,
    backproject_prism,
    project_virtual_marker,
    transform_floor_polygon,
)
from .store import (
    CameraRecord,
    Floorplan,
    ImageRef,
    Project,
    ProjectStore,
    derive_model,
    load_project,
    save_project,
)
from .vanishing import (
    ImageLine,
    VanishingPoint,
    estimate_vanishing_point,
    roll_from_vertical_vp,
    vertical_line_through,
)

__version__ = "0.1.0"

__all__ = [
    "AnnotationSet",
    "CalibrationError",
    "CameraIntrinsics",
    "CameraModel",
    "CameraPose",
    "CameraRecord",
    "DistortionModel",
    "Floorplan",
    "FloorPolygon",
    "ImageLine",
    "ImageRef",
    "PartialCalibration",
    "PixelPoint",
    "PlacementTransform",
    "PrismOverlay",
    "Project",
    "ProjectStore",
    "VanishingPoint",
    "VirtualMarker",
    "WorldPoint",
    "apply_placement",
    "assemble_full_calibration",
    "backproject_prism",
    "compose_rotation",
    "derive_model",
    "estimate_vanishing_point",
    "evaluate_criterion",
    "fit_distortion",
    "load_project",
    "project_efov",
    "project_pixel_to_world",
    "project_virtual_marker",
    "project_world_to_pixel",
    "projection_matrix",
    "roll_from_vertical_vp",
    "save_project",
    "solve_partial",
    "transform_floor_polygon",
    "undistort_point",
    "vertical_line_through",
]
