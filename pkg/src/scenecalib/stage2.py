"""Stage 2: turn polygon move/scale/rotate actions into the remaining pose.

After stage 1 the projected field-of-view polygon sits at the origin with
correct proportions. The operator drags it into place: the translation
becomes the camera position (x0, y0), the scale factor multiplies the 3 m
default mounting height, and the rotation angle becomes yaw. Rotation is
about the polygon's projection origin, positive in the same sense as yaw
(clockwise seen from above), so the parameter read-off is direct.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InconsistentPartial
from .model import (
    CameraIntrinsics,
    CameraModel,
    CameraPose,
    PixelPoint,
    WorldPoint,
    project_points_to_pixels,
)
from .stage1 import DEFAULT_HEIGHT, FloorPolygon, PartialCalibration

#: marker overlap margin: a marker farther than this outside the frame
#: (as a fraction of each image dimension) is reported absent
FRAME_MARGIN_FRACTION = 0.5

MARKER_SHAPES = ("point", "cross", "square", "vertical")


@dataclass(frozen=True)
class PlacementTransform:
    """Operator action on a projected polygon: translate, scale, rotate.

    theta rotates about the projection origin, positive clockwise when the
    floor plane is seen from above (matching the yaw sign convention).
    """

    dx: float
    dy: float
    scale: float
    theta: float

    def __post_init__(self):
        vals = (self.dx, self.dy, self.scale, self.theta)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"transform values must be finite, got {vals}")
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")


@dataclass(frozen=True)
class VirtualMarker:
    """Synthetic world object projected into every calibrated camera.

    side is the extent of cross and square shapes; height the extent of
    vertical-segment markers. Unused dimensions stay 0.
    """

    id: str
    shape: str
    position: WorldPoint
    side: float = 0.0
    height: float = 0.0

    def __post_init__(self):
        if self.shape not in MARKER_SHAPES:
            raise ValueError(f"unknown marker shape {self.shape!r}")
        if self.side < 0 or self.height < 0:
            raise ValueError("marker side and height must be >= 0")

    def outline(self) -> list[WorldPoint]:
        x, y, z = self.position
        if self.shape == "point":
            return [self.position]
        if self.shape == "cross":
            h = self.side / 2.0
            return [
                WorldPoint(x - h, y, z),
                WorldPoint(x + h, y, z),
                WorldPoint(x, y - h, z),
                WorldPoint(x, y + h, z),
            ]
        if self.shape == "square":
            h = self.side / 2.0
            return [
                WorldPoint(x - h, y - h, z),
                WorldPoint(x + h, y - h, z),
                WorldPoint(x + h, y + h, z),
                WorldPoint(x - h, y + h, z),
            ]
        return [self.position, WorldPoint(x, y, z + self.height)]


@dataclass(frozen=True)
class PrismOverlay:
    """Field-of-view prism back-projected into an image.

    base[i] and top[i] correspond; vertices behind the camera carry a False
    visibility flag and a None pixel instead of erroring.
    """

    base: tuple[Optional[PixelPoint], ...]
    top: tuple[Optional[PixelPoint], ...]
    base_visible: tuple[bool, ...]
    top_visible: tuple[bool, ...]

    def __post_init__(self):
        n = len(self.base)
        if not (len(self.top) == len(self.base_visible) == len(self.top_visible) == n):
            raise ValueError("prism rings and flags must have equal lengths")


def apply_placement(partial: PartialCalibration, t: PlacementTransform) -> CameraPose:
    """Read the remaining pose off the operator's transform.

    The polygon starts at the projection origin, so its displacement is the
    camera position; the default 3 m height is multiplied by the scale
    factor (a 1.5x stretch means the camera hangs at 4.5 m); the rotation
    angle is the yaw. Roll and pitch carry over unchanged.
    """
    return CameraPose(
        x0=t.dx,
        y0=t.dy,
        z0=partial.z0 * t.scale,
        yaw=t.theta,
        pitch=partial.pitch,
        roll=partial.roll,
    )


def placement_from_pose(pose: CameraPose) -> PlacementTransform:
    """Inverse of apply_placement (exact, given the same 3 m default)."""
    return PlacementTransform(
        dx=pose.x0, dy=pose.y0, scale=pose.z0 / DEFAULT_HEIGHT, theta=pose.yaw
    )


def rotation2d(theta: float) -> np.ndarray:
    """Floor-plane rotation by theta in the yaw sense (clockwise from above)."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, s], [-s, c]])


def transform_floor_polygon(poly: FloorPolygon, t: PlacementTransform) -> FloorPolygon:
    """Rotate by theta, scale about the origin, then translate by (dx, dy)."""
    xy = poly.xy() @ rotation2d(t.theta).T * t.scale + np.array([t.dx, t.dy])
    return FloorPolygon(tuple(WorldPoint(x, y, 0.0) for x, y in xy))


def assemble_full_calibration(
    partial: PartialCalibration,
    pose: CameraPose,
    image_width: float,
    image_height: float,
) -> CameraModel:
    """Combine stage-1 intrinsics/orientation with the stage-2 pose.

    Raises InconsistentPartial when the pose does not carry the partial's
    roll and pitch unchanged.
    """
    if pose.roll != partial.roll or pose.pitch != partial.pitch:
        raise InconsistentPartial(
            f"pose (roll={pose.roll}, pitch={pose.pitch}) disagrees with the "
            f"stage-1 result (roll={partial.roll}, pitch={partial.pitch})"
        )
    return CameraModel(pose, CameraIntrinsics(partial.focal, image_width, image_height))


def _project_ring(points: Sequence[WorldPoint], m: CameraModel):
    uv, valid = project_points_to_pixels(np.array([tuple(p) for p in points]), m)
    pixels = tuple(
        PixelPoint(float(u), float(v)) if ok else None for (u, v), ok in zip(uv, valid)
    )
    return pixels, tuple(bool(v) for v in valid)


def backproject_prism(
    efov3d: FloorPolygon, model: CameraModel, height: float = 2.0
) -> PrismOverlay:
    """Back-project the field-of-view prism into the image.

    The prism base is the floor polygon; the top ring is the same polygon
    raised to the given height (2 m covers a standing person).
    """
    base_pts = list(efov3d.vertices)
    top_pts = [WorldPoint(v.x, v.y, v.z + height) for v in efov3d.vertices]
    base, base_visible = _project_ring(base_pts, model)
    top, top_visible = _project_ring(top_pts, model)
    return PrismOverlay(base=base, top=top, base_visible=base_visible, top_visible=top_visible)


def project_virtual_marker(
    marker: VirtualMarker, models: Sequence[CameraModel]
) -> list[Optional[list[PixelPoint]]]:
    """Project a marker's outline into each camera.

    Per camera the result is the outline pixel list, or None when the marker
    is behind the camera or entirely outside a generous frame margin.
    """
    outline = marker.outline()
    results: list[Optional[list[PixelPoint]]] = []
    for m in models:
        uv, valid = project_points_to_pixels(np.array([tuple(p) for p in outline]), m)
        if not valid.all():
            results.append(None)
            continue
        w, h = m.intrinsics.image_width, m.intrinsics.image_height
        mu, mv = FRAME_MARGIN_FRACTION * w, FRAME_MARGIN_FRACTION * h
        inside = (
            (uv[:, 0] >= -mu) & (uv[:, 0] <= w + mu) & (uv[:, 1] >= -mv) & (uv[:, 1] <= h + mv)
        )
        if not inside.any():
            results.append(None)
            continue
        results.append([PixelPoint(float(u), float(v)) for u, v in uv])
    return results
