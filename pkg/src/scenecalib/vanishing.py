"""Vanishing point of annotated vertical lines and roll-angle recovery.

Lines vertical in the scene converge at a single image point (finite when
the camera is tilted, at infinity for a level camera drawn with parallel
strokes). The direction from the principal point to that point encodes the
roll angle: roll is the signed angle from the image-down axis toward +u,
folded into (-pi/2, pi/2] because mounted cameras are close to level and
the up/down choice of vanishing point is immaterial for the model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import AmbiguousRoll, CoincidentPoint, DegenerateLines
from .model import PixelPoint

#: |w| below which a normalized homogeneous point counts as infinite
INFINITY_W = 1e-8

#: minimum endpoint separation for a drawable line, pixels
MIN_ENDPOINT_SEPARATION = 1e-6


@dataclass(frozen=True)
class ImageLine:
    """Straight image line given by the two endpoints the operator drew."""

    p1: PixelPoint
    p2: PixelPoint

    def __post_init__(self):
        if self.length() <= MIN_ENDPOINT_SEPARATION:
            raise ValueError(f"line endpoints must be distinct: {self.p1} ~ {self.p2}")

    def length(self) -> float:
        return math.hypot(self.p2.u - self.p1.u, self.p2.v - self.p1.v)

    def coefficients(self) -> tuple[float, float, float]:
        """Homogeneous line (a, b, c) with a*u + b*v + c = 0 and a^2 + b^2 = 1."""
        a = self.p1.v - self.p2.v
        b = self.p2.u - self.p1.u
        c = self.p1.u * self.p2.v - self.p2.u * self.p1.v
        n = math.hypot(a, b)
        return (a / n, b / n, c / n)

    def direction(self) -> tuple[float, float]:
        """Unit direction from p1 to p2."""
        n = self.length()
        return ((self.p2.u - self.p1.u) / n, (self.p2.v - self.p1.v) / n)


class VanishingPoint(NamedTuple):
    """Homogeneous image point (x, y, w), scaled so max |component| = 1.

    w below INFINITY_W means a point at infinity with direction (x, y).
    """

    x: float
    y: float
    w: float

    @property
    def is_finite(self) -> bool:
        return abs(self.w) >= INFINITY_W

    def to_pixel(self) -> PixelPoint:
        if not self.is_finite:
            raise ValueError("vanishing point at infinity has no pixel position")
        return PixelPoint(self.x / self.w, self.y / self.w)


def _normalize_homogeneous(v: np.ndarray) -> VanishingPoint:
    i = int(np.argmax(np.abs(v)))
    return VanishingPoint(*(v / v[i]))


def estimate_vanishing_point(lines: Sequence[ImageLine]) -> tuple[VanishingPoint, float]:
    """Least-squares intersection of two or more image lines.

    Returns the homogeneous point minimizing the sum of squared algebraic
    distances to all lines (smallest right singular vector of the stacked
    coefficient rows) together with the RMS perpendicular distance from the
    point to the lines. For a point at infinity the residual is the RMS
    algebraic distance of the direction instead.

    Raises DegenerateLines for fewer than two lines or when all lines are
    identical within tolerance.
    """
    if len(lines) < 2:
        raise DegenerateLines(f"need at least 2 lines, got {len(lines)}")
    coeffs = np.array([l.coefficients() for l in lines])
    _, s, vh = np.linalg.svd(coeffs)
    if s[1] <= 1e-9 * s[0]:
        raise DegenerateLines("all lines are identical within tolerance")
    vp = _normalize_homogeneous(vh[-1])
    if vp.is_finite:
        px = vp.to_pixel()
        d = coeffs[:, 0] * px.u + coeffs[:, 1] * px.v + coeffs[:, 2]
    else:
        d = coeffs[:, 0] * vp.x + coeffs[:, 1] * vp.y
    return vp, float(np.sqrt(np.mean(d * d)))


def _fold_half_turn(a: float) -> float:
    """Map an angle into (-pi/2, pi/2] modulo pi."""
    a = math.remainder(a, math.pi)
    if a <= -math.pi / 2:
        a += math.pi
    return a


def roll_from_vertical_vp(vp: VanishingPoint, center: PixelPoint) -> float:
    """Roll angle implied by the verticals' vanishing point.

    Signed angle between the image-down axis and the direction from the
    principal point toward the vanishing point (its direction when at
    infinity), folded modulo pi so the smaller-magnitude roll is returned.

    Raises AmbiguousRoll when a finite vanishing point sits within 1 px of
    the principal point (the vertical direction is undefined there).
    """
    if vp.is_finite:
        px = vp.to_pixel()
        du, dv = px.u - center.u, px.v - center.v
        if math.hypot(du, dv) < 1.0:
            raise AmbiguousRoll(
                f"vanishing point {px} within 1 px of the principal point {center}"
            )
    else:
        du, dv = vp.x, vp.y
    return _fold_half_turn(math.atan2(du, dv))


def vertical_line_through(p: PixelPoint, vp: VanishingPoint) -> ImageLine:
    """Image line through p toward the vertical vanishing point.

    This is the projection of the world-vertical line standing at whatever
    floor point p depicts. Raises CoincidentPoint when p equals a finite vp.
    """
    if vp.is_finite:
        q = vp.to_pixel()
        if math.hypot(q.u - p.u, q.v - p.v) <= MIN_ENDPOINT_SEPARATION:
            raise CoincidentPoint(f"point {p} coincides with the vanishing point")
        return ImageLine(p, q)
    n = math.hypot(vp.x, vp.y)
    # second endpoint 100 px along the direction; the line itself is what matters
    return ImageLine(p, PixelPoint(p.u + 100.0 * vp.x / n, p.v + 100.0 * vp.y / n))
