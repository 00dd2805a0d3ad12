"""Radial distortion estimated from polylines traced over curved lines.

The operator traces polylines along image curves that are straight in the
real scene. Two radial coefficients are fitted so that undistorting the
polyline points makes each polyline collinear. Only annotated coordinates
are ever mapped; images are never resampled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import InsufficientData, NonConvergence
from .model import PixelPoint

#: fit restarts from a perturbed simplex while the residual exceeds this, px
RESTART_RESIDUAL_PX = 2.0


@dataclass(frozen=True)
class DistortionModel:
    """Two-coefficient radial model.

    Radii are normalized by half the image diagonal, so k1 and k2 are
    dimensionless and comparable across image sizes. The undistort map must
    be monotone in radius over the image (checked on the diagonal).
    """

    k1: float
    k2: float
    normalization_radius: float

    def __post_init__(self):
        if self.normalization_radius <= 0:
            raise ValueError("normalization radius must be positive")
        r = np.linspace(0.0, 1.0, 101)
        g = r * (1.0 + self.k1 * r**2 + self.k2 * r**4)
        if np.any(np.diff(g) <= 0):
            raise ValueError(
                f"undistort map not monotone over the image for k1={self.k1}, k2={self.k2}"
            )

    @property
    def is_identity(self) -> bool:
        return self.k1 == 0.0 and self.k2 == 0.0


def undistort_point(q: PixelPoint, d: DistortionModel, center: PixelPoint) -> PixelPoint:
    """Apply q' = center + (q - center) * (1 + k1 r^2 + k2 r^4)."""
    du, dv = q.u - center.u, q.v - center.v
    r2 = (du * du + dv * dv) / (d.normalization_radius**2)
    factor = 1.0 + d.k1 * r2 + d.k2 * r2 * r2
    return PixelPoint(center.u + du * factor, center.v + dv * factor)


def _undistort_array(pts: np.ndarray, k1: float, k2: float, center: np.ndarray, rnorm: float) -> np.ndarray:
    d = pts - center
    r2 = (d * d).sum(axis=1) / (rnorm * rnorm)
    factor = 1.0 + k1 * r2 + k2 * r2 * r2
    return center + d * factor[:, None]


def _straightness(pts: np.ndarray) -> float:
    """Mean squared perpendicular distance of points to their best-fit line.

    Total-least-squares line through the centroid: the mean squared
    perpendicular distance is the smaller eigenvalue of the 2x2 covariance.
    """
    c = pts - pts.mean(axis=0)
    cov = c.T @ c / len(pts)
    tr = cov[0, 0] + cov[1, 1]
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
    disc = max(tr * tr / 4.0 - det, 0.0)
    return max(tr / 2.0 - math.sqrt(disc), 0.0)


def fit_distortion(
    polylines: Sequence[Sequence[PixelPoint]],
    image_width: float,
    image_height: float,
) -> tuple[DistortionModel, float]:
    """Fit (k1, k2) so the undistorted polylines become straight.

    Minimizes the sum over polylines of the mean squared perpendicular
    distance of undistorted points to their best-fit line. Returns the model
    and the RMS point-to-line residual in pixels.

    Raises InsufficientData when no polyline has at least 3 points (2-point
    polylines are straight by construction and carry no information), and
    NonConvergence when the simplex search exhausts its budget.
    """
    usable = [np.array([(p[0], p[1]) for p in pl], dtype=float) for pl in polylines if len(pl) >= 3]
    if not usable:
        raise InsufficientData("need at least one polyline with 3 or more points")
    for pts in usable:
        if np.any(np.all(np.diff(pts, axis=0) == 0.0, axis=1)):
            raise ValueError("polyline has repeated consecutive points")

    center = np.array([image_width / 2.0, image_height / 2.0])
    rnorm = math.hypot(image_width, image_height) / 2.0
    n_points = sum(len(p) for p in usable)

    def objective(k: np.ndarray) -> float:
        return sum(_straightness(_undistort_array(pts, k[0], k[1], center, rnorm)) for pts in usable)

    def rms(k: np.ndarray) -> float:
        total = sum(
            _straightness(_undistort_array(pts, k[0], k[1], center, rnorm)) * len(pts)
            for pts in usable
        )
        return math.sqrt(total / n_points)

    options = {"xatol": 1e-12, "fatol": 1e-18, "maxiter": 2000}
    res = minimize(objective, np.zeros(2), method="Nelder-Mead", options=options)
    if rms(res.x) > RESTART_RESIDUAL_PX:
        # one restart from a perturbed simplex around the first answer
        k0 = res.x
        simplex = np.array([k0, k0 + [0.05, 0.0], k0 + [0.0, 0.02]])
        res2 = minimize(
            objective, k0, method="Nelder-Mead", options={**options, "initial_simplex": simplex}
        )
        if res2.fun < res.fun:
            res = res2
    if not res.success:
        raise NonConvergence(f"distortion fit stopped after {res.nit} iterations")
    k1, k2 = float(res.x[0]), float(res.x[1])
    try:
        model = DistortionModel(k1, k2, rnorm)
    except ValueError as e:
        raise NonConvergence(str(e)) from e
    return model, rms(res.x)


def undistort_pixels(pts: Sequence[PixelPoint], d: DistortionModel, center: PixelPoint) -> list[PixelPoint]:
    return [undistort_point(p, d, center) for p in pts]
