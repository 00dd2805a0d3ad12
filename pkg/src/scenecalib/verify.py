"""Invariant suite for calibrated projects.

Measures the geometric self-consistency properties that a correct
calibration must satisfy (projection round trips, placement consistency,
matrix agreement, cross-camera agreement) and reports each with its
measured value and tolerance. Used by `calib verify` and usable directly.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NoIntersection
from .model import (
    CameraModel,
    PixelPoint,
    WorldPoint,
    project_pixel_to_world,
    project_world_to_pixel,
    projection_matrix,
)
from .stage1 import project_efov
from .stage2 import transform_floor_polygon
from .store import CameraRecord, Project, camera_is_calibrated, derive_model

ROUND_TRIP_TOL_PX = 1e-6
PLACEMENT_TOL_M = 1e-9
MATRIX_TOL_PX = 1e-9
AGREEMENT_TOL_M = 1e-3


def _check(name: str, camera: str, measured: float, tolerance: float) -> dict:
    return {
        "name": name,
        "camera": camera,
        "measured": float(f"{measured:.9g}"),
        "tolerance": tolerance,
        "pass": bool(measured <= tolerance),
    }


def _floor_pixels(model: CameraModel, n: int = 7) -> list[PixelPoint]:
    w, h = model.intrinsics.image_width, model.intrinsics.image_height
    pixels = []
    for u in np.linspace(0.06 * w, 0.94 * w, n):
        for v in np.linspace(0.06 * h, 0.94 * h, n):
            pixels.append(PixelPoint(float(u), float(v)))
    return pixels


def _round_trip_error(model: CameraModel) -> float:
    worst = 0.0
    hits = 0
    for q in _floor_pixels(model):
        try:
            p = project_pixel_to_world(q, 0.0, model)
        except NoIntersection:
            continue
        back = project_world_to_pixel(p, model)
        worst = max(worst, math.hypot(back.u - q.u, back.v - q.v))
        hits += 1
    return worst if hits else float("inf")


def _placement_error(record: CameraRecord, model: CameraModel) -> float:
    efov3d = project_efov(
        record.annotation, record.partial, record.image.width, record.image.height
    )
    moved = transform_floor_polygon(efov3d, record.placement)
    worst = 0.0
    for vertex, pixel in zip(moved.vertices, record.annotation.efov_polygon):
        p = project_pixel_to_world(pixel, 0.0, model)
        worst = max(worst, math.hypot(p.x - vertex.x, p.y - vertex.y))
    return worst


def _matrix_error(model: CameraModel) -> float:
    m = projection_matrix(model)
    worst = 0.0
    for q in _floor_pixels(model):
        try:
            p = project_pixel_to_world(q, 0.0, model)
        except NoIntersection:
            continue
        h = m @ np.array([p.x, p.y, p.z, 1.0])
        worst = max(worst, math.hypot(h[0] / h[2] - q.u, h[1] / h[2] - q.v))
    return worst


def _agreement_error(a: CameraRecord, ma: CameraModel, b: CameraRecord, mb: CameraModel):
    """Worst world disagreement on floor points seen by both cameras."""
    efov_a = transform_floor_polygon(
        project_efov(a.annotation, a.partial, a.image.width, a.image.height), a.placement
    )
    xy = efov_a.xy()
    centroid = xy.mean(axis=0)
    worst = None
    for frac in np.linspace(0.0, 0.9, 10):
        for corner in xy:
            p = WorldPoint(*(centroid + frac * (corner - centroid)), 0.0)
            try:
                qa = project_world_to_pixel(p, ma)
                qb = project_world_to_pixel(p, mb)
                wa = project_pixel_to_world(qa, 0.0, ma)
                wb = project_pixel_to_world(qb, 0.0, mb)
            except Exception:
                continue
            if not _inside(qa, ma) or not _inside(qb, mb):
                continue
            err = math.hypot(wa.x - wb.x, wa.y - wb.y)
            worst = err if worst is None else max(worst, err)
    return worst


def _inside(q: PixelPoint, m: CameraModel) -> bool:
    return 0 <= q.u <= m.intrinsics.image_width and 0 <= q.v <= m.intrinsics.image_height


def run_verification(project: Project) -> dict:
    """Measure every property on every calibrated camera; returns the report.

    The report is a JSON tree: {"checks": [...], "pass": bool}; each check
    carries the measured value and its tolerance.
    """
    calibrated = [(c, derive_model(c)) for c in project.cameras if camera_is_calibrated(c)]
    checks = []
    for record, model in calibrated:
        checks.append(
            _check("pixel-world-round-trip", record.id, _round_trip_error(model), ROUND_TRIP_TOL_PX)
        )
        checks.append(
            _check("placement-consistency", record.id, _placement_error(record, model), PLACEMENT_TOL_M)
        )
        checks.append(
            _check("matrix-agreement", record.id, _matrix_error(model), MATRIX_TOL_PX)
        )
    for i in range(len(calibrated)):
        for j in range(i + 1, len(calibrated)):
            (ra, ma), (rb, mb) = calibrated[i], calibrated[j]
            err = _agreement_error(ra, ma, rb, mb)
            if err is None:
                continue  # no shared floor points; nothing to compare
            checks.append(
                _check("cross-camera-agreement", f"{ra.id}+{rb.id}", err, AGREEMENT_TOL_M)
            )
    return {
        "calibrated_cameras": [c.id for c, _ in calibrated],
        "checks": checks,
        "pass": bool(checks) and all(c["pass"] for c in checks),
    }
