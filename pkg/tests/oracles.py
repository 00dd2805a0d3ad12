"""Independent reference implementations used only to check the library.

Everything here is written against the documented conventions but through
different code paths than the package (explicit homogeneous matrices,
closed-form similarity fits, numeric model inversion), so agreement is
meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from scenecalib import (
    AnnotationSet,
    CameraIntrinsics,
    CameraModel,
    CameraPose,
    ImageLine,
    PixelPoint,
    WorldPoint,
)
from scenecalib.stage1 import OPTION1, OPTION2


# --- independent homogeneous-matrix projector ---------------------------------

def oracle_rotation(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """World->camera rotation assembled from scratch.

    Elementary matrices written out by hand: yaw counterclockwise about
    world z, pitch about y, roll clockwise about the forward axis, then the
    axis permutation to (right, down, forward).
    """
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cr, sr = math.cos(roll), math.sin(roll)
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]], dtype=float)
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]], dtype=float)
    rx = np.array([[1, 0, 0], [0, cr, sr], [0, -sr, cr]], dtype=float)
    swap = np.array([[0, -1, 0], [0, 0, -1], [1, 0, 0]], dtype=float)
    return swap @ rx @ ry @ rz


def oracle_projection_matrix(cam: CameraModel) -> np.ndarray:
    p = cam.pose
    i = cam.intrinsics
    k = np.array(
        [
            [i.focal, 0, i.image_width / 2.0],
            [0, i.focal, i.image_height / 2.0],
            [0, 0, 1],
        ],
        dtype=float,
    )
    r = oracle_rotation(p.yaw, p.pitch, p.roll)
    t = -r @ np.array([p.x0, p.y0, p.z0])
    return k @ np.hstack([r, t.reshape(3, 1)])


def oracle_project(p: WorldPoint, cam: CameraModel) -> PixelPoint:
    """Project via the full 3x4 homogeneous matrix; raises on nonpositive depth."""
    h = oracle_projection_matrix(cam) @ np.array([p.x, p.y, p.z, 1.0])
    if h[2] <= 1e-9:
        raise ValueError(f"point behind camera (w = {h[2]:.3g})")
    return PixelPoint(h[0] / h[2], h[1] / h[2])


def oracle_backproject(q: PixelPoint, h: float, cam: CameraModel) -> WorldPoint:
    """Invert the homogeneous matrix restricted to the plane z = h."""
    m = oracle_projection_matrix(cam)
    # columns for x, y and the constant term on plane z = h
    a = np.column_stack([m[:, 0], m[:, 1], m[:, 2] * h + m[:, 3]])
    w = np.linalg.solve(a, np.array([q.u, q.v, 1.0]))
    if w[2] == 0:
        raise ValueError("ray parallel to plane")
    return WorldPoint(w[0] / w[2], w[1] / w[2], h)


def make_camera(
    x0=0.0, y0=0.0, z0=3.0, yaw=0.0, pitch=-0.6, roll=0.0, focal=1200.0, width=1920, height=1080
) -> CameraModel:
    return CameraModel(
        CameraPose(x0, y0, z0, yaw, pitch, roll),
        CameraIntrinsics(focal, width, height),
    )


# --- 2D similarity (Procrustes) ------------------------------------------------

@dataclass(frozen=True)
class Similarity2D:
    """v' = t + s * R(theta) v with R in the package's yaw sense
    (positive theta rotates clockwise seen from above)."""

    dx: float
    dy: float
    scale: float
    theta: float

    def apply(self, xy: np.ndarray) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        rot = np.array([[c, s], [-s, c]])
        return xy @ rot.T * self.scale + np.array([self.dx, self.dy])


def fit_similarity(src: np.ndarray, dst: np.ndarray) -> tuple[Similarity2D, float]:
    """Least-squares similarity src -> dst via the complex closed form.

    Returns the transform and the RMS residual after alignment.
    """
    zs = src[:, 0] + 1j * src[:, 1]
    zd = dst[:, 0] + 1j * dst[:, 1]
    ms, md = zs.mean(), zd.mean()
    zs_c, zd_c = zs - ms, zd - md
    # conj because the package rotation convention is the complex conjugate
    # of the standard counterclockwise one
    alpha = np.vdot(zs_c, zd_c) / np.vdot(zs_c, zs_c)
    scale = abs(alpha)
    theta = -math.atan2(alpha.imag, alpha.real)
    t = md - alpha * ms
    sim = Similarity2D(dx=t.real, dy=t.imag, scale=scale, theta=theta)
    res = sim.apply(src) - dst
    return sim, float(np.sqrt(np.mean(np.sum(res * res, axis=1))))


# --- forward distortion (inverse of the undistort model) -----------------------

def oracle_distort(
    pts: np.ndarray, k1: float, k2: float, center: np.ndarray, rnorm: float
) -> np.ndarray:
    """Map undistorted points to raw coordinates by numeric model inversion.

    Solves r_d (1 + k1 r_d^2 + k2 r_d^4) = r_u per point with a bracketed
    root find, which is exact wherever the model is monotone.
    """

    out = np.empty_like(pts, dtype=float)
    for i, p in enumerate(pts):
        d = p - center
        ru = math.hypot(*d) / rnorm
        if ru == 0:
            out[i] = center
            continue
        g = lambda rd: rd * (1.0 + k1 * rd * rd + k2 * rd**4) - ru
        rd = brentq(g, 0.0, 2.0, xtol=1e-15)
        out[i] = center + d * (rd / ru)
    return out


# --- synthetic scene rendering --------------------------------------------------

@dataclass
class SyntheticScene:
    camera: CameraModel
    annotation: AnnotationSet
    floor_footprint: np.ndarray  # (n, 2) world xy of the drawn polygon


def _gaze_floor_point(cam: CameraModel) -> np.ndarray:
    """Where the optical axis meets the floor (camera must look down)."""
    r = oracle_rotation(cam.pose.yaw, cam.pose.pitch, cam.pose.roll)
    gaze = r.T @ np.array([0.0, 0.0, 1.0])
    if gaze[2] >= -1e-6:
        raise ValueError("camera does not look down")
    t = -cam.pose.z0 / gaze[2]
    c = np.array([cam.pose.x0, cam.pose.y0, cam.pose.z0])
    return (c + t * gaze)[:2]


def _in_frame(q: PixelPoint, cam: CameraModel, margin: float = 8.0) -> bool:
    w, h = cam.intrinsics.image_width, cam.intrinsics.image_height
    return margin <= q.u <= w - margin and margin <= q.v <= h - margin


def _render_line(a: np.ndarray, b: np.ndarray, cam: CameraModel) -> ImageLine | None:
    try:
        qa = oracle_project(WorldPoint(*a), cam)
        qb = oracle_project(WorldPoint(*b), cam)
    except ValueError:
        return None
    if not (_in_frame(qa, cam) and _in_frame(qb, cam)):
        return None
    if math.hypot(qa.u - qb.u, qa.v - qb.v) < 25.0:
        return None
    return ImageLine(qa, qb)


def render_scene(
    cam: CameraModel, rng: np.random.Generator, option: str = OPTION1
) -> SyntheticScene:
    """Render a consistent annotation set through a known camera.

    World primitives obeying the annotation rules are laid out around the
    camera's floor gaze point and projected with the oracle projector; the
    layout shrinks and retries until every stroke lands inside the frame.
    """
    g = _gaze_floor_point(cam)
    cxy = np.array([cam.pose.x0, cam.pose.y0])
    reach = max(np.linalg.norm(g - cxy), cam.pose.z0)

    for attempt in range(200):
        radius = reach * 0.6 * (0.85**attempt)
        scene = _try_layout(cam, rng, g, radius, option)
        if scene is not None:
            return scene
    raise RuntimeError(f"could not fit a synthetic scene for camera {cam}")


def _try_layout(cam, rng, g, radius, option) -> SyntheticScene | None:
    def floor(p):
        return np.array([p[0], p[1], 0.0])

    def spot(r_frac=1.0):
        ang = rng.uniform(0, 2 * math.pi)
        rad = radius * r_frac * math.sqrt(rng.uniform(0.05, 1.0))
        return g + rad * np.array([math.cos(ang), math.sin(ang)])

    verticals = []
    for _ in range(3):
        base = spot()
        height = min(rng.uniform(0.4, 0.8) * radius, 0.7 * cam.pose.z0)
        line = _render_line(floor(base), floor(base) + [0, 0, height], cam)
        if line is None:
            return None
        verticals.append(line)

    parallel, perpendicular, segments = [], [], []
    if option == OPTION1:
        phi = rng.uniform(0, 2 * math.pi)
        d = np.array([math.cos(phi), math.sin(phi)])
        for _ in range(3):
            c0 = spot()
            half = rng.uniform(0.3, 0.6) * radius
            line = _render_line(floor(c0 - half * d), floor(c0 + half * d), cam)
            if line is None:
                return None
            parallel.append(line)
        psi = rng.uniform(0, 2 * math.pi)
        e1 = np.array([math.cos(psi), math.sin(psi)])
        e2 = np.array([-math.sin(psi), math.cos(psi)])
        c0 = spot(0.7)
        for e in (e1, e2):
            half = rng.uniform(0.3, 0.6) * radius
            line = _render_line(floor(c0 - half * e), floor(c0 + half * e), cam)
            if line is None:
                return None
            perpendicular.append(line)
    else:
        length = rng.uniform(0.5, 0.9) * radius
        for _ in range(4):
            c0 = spot()
            ang = rng.uniform(0, 2 * math.pi)
            d = np.array([math.cos(ang), math.sin(ang)])
            line = _render_line(floor(c0 - 0.5 * length * d), floor(c0 + 0.5 * length * d), cam)
            if line is None or line.length() < 25.0:
                return None
            segments.append(line)

    # drawn field of view: a floor square centered near the gaze point
    side = radius * 0.8
    ang = rng.uniform(0, 2 * math.pi)
    rot = np.array(
        [[math.cos(ang), -math.sin(ang)], [math.sin(ang), math.cos(ang)]]
    )
    corners = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]]) * side / 2.0 @ rot.T + g
    efov = []
    for corner in corners:
        try:
            q = oracle_project(WorldPoint(corner[0], corner[1], 0.0), cam)
        except ValueError:
            return None
        if not _in_frame(q, cam):
            return None
        efov.append(q)

    annotation = AnnotationSet(
        option=option,
        vertical_lines=tuple(verticals),
        parallel_lines=tuple(parallel),
        perpendicular_pair=tuple(perpendicular),
        equal_segments=tuple(segments),
        efov_polygon=tuple(efov),
    )
    return SyntheticScene(camera=cam, annotation=annotation, floor_footprint=corners)


def random_camera(rng: np.random.Generator, width=1920, height=1080) -> CameraModel:
    """Camera in the stage-1 recovery regime."""
    return make_camera(
        x0=rng.uniform(-10, 10),
        y0=rng.uniform(-10, 10),
        z0=rng.uniform(2.2, 6.0),
        yaw=rng.uniform(-math.pi, math.pi),
        pitch=rng.uniform(-1.2, -0.2),
        roll=rng.uniform(-0.4, 0.4),
        focal=rng.uniform(0.5, 3.0) * width,
        width=width,
        height=height,
    )
