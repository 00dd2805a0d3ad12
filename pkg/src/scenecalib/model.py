"""Pinhole camera model linking pixel and world coordinate systems.

COORDINATE SYSTEM CONVENTIONS (fixed for the whole package)
===========================================================

World frame (right-handed):
  - x, y span the floor plane, z points up; the floor is z = 0.
  - Units: meters.

Camera frame (right-handed, standard computer vision):
  - x' right in the image, y' down in the image, z' forward along the
    optical axis.
  - At yaw = pitch = roll = 0 the camera looks along world +x and the
    image's down direction points toward world -z (a level camera).

Pixel frame:
  - u grows rightward, v grows downward, origin at the top-left corner.
  - The principal point is fixed at the image center; pixels are square
    and skew-free, so a single focal length (in pixels) completes the
    intrinsics.

Angles (radians everywhere; degrees only at CLI/API boundaries):
  - yaw   : rotation about the world z axis. Positive yaw turns the view
            clockwise when seen from above (+z looking down).
  - pitch : elevation of the optical axis. Negative pitch looks down at
            the floor; pitch = -pi/2 looks straight down.
  - roll  : rotation about the optical axis. Positive roll moves the
            vanishing point of world-vertical lines toward +u.

The full orientation applies yaw first, then pitch, then roll, composed
as R = R_roll @ R_pitch @ R_yaw acting on world coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .errors import BehindCamera, NoIntersection

#: camera-frame depth below which a point counts as behind the camera
DEPTH_EPS = 1e-9


class PixelPoint(NamedTuple):
    """Image position in pixels; may lie outside the frame."""

    u: float
    v: float


class WorldPoint(NamedTuple):
    """Position in the shared world frame, meters, z up."""

    x: float
    y: float
    z: float


def wrap_angle(a: float) -> float:
    """Map an angle into (-pi, pi]."""
    a = math.remainder(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    return a


@dataclass(frozen=True)
class CameraPose:
    """Camera position (meters) and orientation (radians).

    z0 is the mounting height above the floor and must be positive.
    Angles are normalized into (-pi, pi] on construction.
    """

    x0: float
    y0: float
    z0: float
    yaw: float
    pitch: float
    roll: float

    def __post_init__(self):
        vals = (self.x0, self.y0, self.z0, self.yaw, self.pitch, self.roll)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"pose values must be finite, got {vals}")
        if self.z0 <= 0:
            raise ValueError(f"mounting height z0 must be > 0, got {self.z0}")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))
        object.__setattr__(self, "pitch", wrap_angle(self.pitch))
        object.__setattr__(self, "roll", wrap_angle(self.roll))


@dataclass(frozen=True)
class CameraIntrinsics:
    """Focal length in pixels plus image dimensions.

    The principal point is implicitly (image_width / 2, image_height / 2).
    """

    focal: float
    image_width: float
    image_height: float

    def __post_init__(self):
        if not (math.isfinite(self.focal) and self.focal > 0):
            raise ValueError(f"focal must be a positive finite number, got {self.focal}")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValueError(
                f"image dimensions must be positive, got {self.image_width}x{self.image_height}"
            )

    @property
    def principal_point(self) -> PixelPoint:
        return PixelPoint(self.image_width / 2.0, self.image_height / 2.0)


@dataclass(frozen=True)
class CameraModel:
    """The seven pinhole parameters plus image dimensions."""

    pose: CameraPose
    intrinsics: CameraIntrinsics


def _rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_x_cw(a: float) -> np.ndarray:
    # rotation about +x by -a; keeps positive roll consistent with the
    # vanishing-point convention in the module docstring
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]])


def compose_rotation(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Compose the three orientation angles into one rotation matrix.

    Returns R = R_roll @ R_pitch @ R_yaw: applied to world coordinates,
    yaw acts first (about world z, mapping +x toward +y for positive yaw),
    then pitch, then roll about the optical axis.
    """
    for a in (yaw, pitch, roll):
        if not math.isfinite(a):
            raise ValueError(f"angles must be finite, got {(yaw, pitch, roll)}")
    return _rot_x_cw(roll) @ _rot_y(pitch) @ _rot_z(yaw)


#: permutation mapping the zero-angle world-aligned frame to camera axes
#: (x' = -y_world, y' = -z_world, z' = +x_world)
_AXIS_SWAP = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])


@lru_cache(maxsize=512)
def _rotation_cached(yaw: float, pitch: float, roll: float) -> np.ndarray:
    r = _AXIS_SWAP @ compose_rotation(yaw, pitch, roll)
    r.flags.writeable = False
    return r


def world_to_camera_rotation(pose: CameraPose) -> np.ndarray:
    """3x3 rotation taking world-frame vectors into the camera frame."""
    return _rotation_cached(pose.yaw, pose.pitch, pose.roll)


def camera_matrix(m: CameraModel) -> np.ndarray:
    """3x3 intrinsic matrix K with the principal point at image center."""
    f = m.intrinsics.focal
    cx, cy = m.intrinsics.principal_point
    return np.array([[f, 0.0, cx], [0.0, f, cy], [0.0, 0.0, 1.0]])


def projection_matrix(m: CameraModel) -> np.ndarray:
    """3x4 homogeneous world-to-image matrix K @ [R | t], t = -R @ C."""
    r = world_to_camera_rotation(m.pose)
    c = np.array([m.pose.x0, m.pose.y0, m.pose.z0])
    rt = np.hstack([r, (-r @ c).reshape(3, 1)])
    return camera_matrix(m) @ rt


def project_world_to_pixel(p: WorldPoint, m: CameraModel) -> PixelPoint:
    """Project a world point through the pinhole model.

    Raises BehindCamera when the point's camera-frame depth is <= DEPTH_EPS,
    i.e. no valid projection exists.
    """
    r = world_to_camera_rotation(m.pose)
    d0 = p.x - m.pose.x0
    d1 = p.y - m.pose.y0
    d2 = p.z - m.pose.z0
    cx_ = r[0, 0] * d0 + r[0, 1] * d1 + r[0, 2] * d2
    cy_ = r[1, 0] * d0 + r[1, 1] * d1 + r[1, 2] * d2
    depth = r[2, 0] * d0 + r[2, 1] * d1 + r[2, 2] * d2
    if depth <= DEPTH_EPS:
        raise BehindCamera(f"camera-frame depth {depth:.3g} <= {DEPTH_EPS}")
    f = m.intrinsics.focal
    pc = m.intrinsics.principal_point
    return PixelPoint(pc.u + f * cx_ / depth, pc.v + f * cy_ / depth)


def pixel_ray_direction(q: PixelPoint, m: CameraModel) -> np.ndarray:
    """World-frame direction of the ray from the projection center through q.

    Scaled so the camera-frame depth component equals 1.
    """
    f = m.intrinsics.focal
    pc = m.intrinsics.principal_point
    d_cam = np.array([(q.u - pc.u) / f, (q.v - pc.v) / f, 1.0])
    return world_to_camera_rotation(m.pose).T @ d_cam


def project_pixel_to_world(q: PixelPoint, h: float, m: CameraModel) -> WorldPoint:
    """Intersect the pixel's forward ray with the horizontal plane z = h.

    Raises NoIntersection when the ray is parallel to the plane or meets it
    only behind the camera.
    """
    d = pixel_ray_direction(q, m)
    dz = d[2]
    if dz == 0.0 or not math.isfinite(dz):
        raise NoIntersection(f"ray parallel to plane z={h}")
    t = (h - m.pose.z0) / dz
    # t equals the camera-frame depth of the intersection, so forward <=> t > 0
    if not math.isfinite(t) or t <= DEPTH_EPS:
        raise NoIntersection(f"plane z={h} met behind the camera (depth {t:.3g})")
    return WorldPoint(m.pose.x0 + t * d[0], m.pose.y0 + t * d[1], h)


# --- batched variants (used by the optimizer and overlay code) ---------------

def project_points_to_pixels(xyz: np.ndarray, m: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized world->pixel for an (n, 3) array.

    Returns (pixels (n, 2), valid (n,)); invalid rows (depth <= DEPTH_EPS)
    hold NaN.
    """
    r = world_to_camera_rotation(m.pose)
    c = np.array([m.pose.x0, m.pose.y0, m.pose.z0])
    cam = (np.asarray(xyz, dtype=float) - c) @ r.T
    depth = cam[:, 2]
    valid = depth > DEPTH_EPS
    f = m.intrinsics.focal
    pc = m.intrinsics.principal_point
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = np.column_stack([pc.u + f * cam[:, 0] / depth, pc.v + f * cam[:, 1] / depth])
    uv[~valid] = np.nan
    return uv, valid


def project_pixels_to_plane(uv: np.ndarray, h: float, m: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized pixel->world onto plane z = h for an (n, 2) array.

    Returns (points (n, 3), valid (n,)); invalid rows hold NaN.
    """
    f = m.intrinsics.focal
    pc = m.intrinsics.principal_point
    uv = np.asarray(uv, dtype=float)
    d_cam = np.column_stack([(uv[:, 0] - pc.u) / f, (uv[:, 1] - pc.v) / f, np.ones(len(uv))])
    d_world = d_cam @ world_to_camera_rotation(m.pose)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (h - m.pose.z0) / d_world[:, 2]
    valid = np.isfinite(t) & (t > DEPTH_EPS)
    pts = np.array([m.pose.x0, m.pose.y0, m.pose.z0]) + t[:, None] * d_world
    pts[valid, 2] = h  # exact plane height, no roundoff residue
    pts[~valid] = np.nan
    return pts, valid
