"""Stage 1: estimate roll, pitch and focal length from annotated geometry.

The operator draws image primitives that obey known rules in the scene
(not in the image): lines parallel on the floor, a perpendicular pair on
the floor, vertical lines, or floor segments of equal length. Roll comes
from the verticals' vanishing point; pitch and focal length minimize a
geometric-consistency criterion that is zero exactly when the projected
primitives satisfy their rules in the world frame. Position and yaw stay
at defaults (0, 0, height 3 m, yaw 0) until stage 2.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import (
    DegenerateLines,
    HorizonViolation,
    InfeasibleGeometry,
    NonConvergence,
    ProjectionFailure,
    ValidationFailure,
)
from .model import (
    CameraIntrinsics,
    CameraModel,
    CameraPose,
    PixelPoint,
    WorldPoint,
    _AXIS_SWAP,
    compose_rotation,
    project_pixels_to_plane,
    world_to_camera_rotation,
)
from .vanishing import ImageLine, estimate_vanishing_point, roll_from_vertical_vp

OPTION1 = "option1"
OPTION2 = "option2"

#: default pose used until stage 2 fixes position and yaw
DEFAULT_HEIGHT = 3.0

#: optimizer search box
PITCH_BOUNDS = (-1.45, 1.45)
FOCAL_BOUNDS_WIDTHS = (0.2, 10.0)

#: multi-start grid (pitch values, focal lengths in image widths)
START_PITCHES = (-1.2, -0.9, -0.6, -0.3, -0.05)
START_FOCALS = (0.5, 1.0, 2.0, 4.0)

#: accept a solve only below this criterion value
CONVERGENCE_TOL = 1e-2

#: minimum drawn length for equal-length segments, pixels
MIN_SEGMENT_PX = 20.0


@dataclass(frozen=True)
class AnnotationSet:
    """Operator-drawn primitives for one camera image.

    Direction-only groups (vertical, parallel, perpendicular) ignore where
    each stroke starts and ends; equal-length segments use their endpoints.
    Distortion polylines, when present, are in raw image coordinates; all
    other primitives are in undistorted coordinates.
    """

    option: str
    vertical_lines: tuple[ImageLine, ...]
    efov_polygon: tuple[PixelPoint, ...]
    parallel_lines: tuple[ImageLine, ...] = ()
    perpendicular_pair: tuple[ImageLine, ...] = ()
    equal_segments: tuple[ImageLine, ...] = ()
    distortion_polylines: tuple[tuple[PixelPoint, ...], ...] = ()

    def validate(self, image_width: float, image_height: float) -> None:
        """Raise ValidationFailure (with field paths) on any violated rule."""
        paths: list[str] = []
        if self.option not in (OPTION1, OPTION2):
            paths.append("option")
        if len(self.vertical_lines) < 2:
            paths.append("vertical_lines")
        if self.option == OPTION1:
            if len(self.parallel_lines) < 2:
                paths.append("parallel_lines")
            if len(self.perpendicular_pair) != 2:
                paths.append("perpendicular_pair")
        elif self.option == OPTION2:
            if len(self.equal_segments) < 2:
                paths.append("equal_segments")
            for i, seg in enumerate(self.equal_segments):
                if seg.length() < MIN_SEGMENT_PX:
                    paths.append(f"equal_segments[{i}]")
        if len(self.efov_polygon) < 3:
            paths.append("efov_polygon")
        elif not _polygon_is_simple(self.efov_polygon):
            paths.append("efov_polygon")

        lo_u, hi_u = -0.5 * image_width, 1.5 * image_width
        lo_v, hi_v = -0.5 * image_height, 1.5 * image_height
        for name, pts in (
            ("vertical_lines", _line_points(self.vertical_lines)),
            ("parallel_lines", _line_points(self.parallel_lines)),
            ("perpendicular_pair", _line_points(self.perpendicular_pair)),
            ("equal_segments", _line_points(self.equal_segments)),
            ("efov_polygon", self.efov_polygon),
        ):
            for p in pts:
                if not (lo_u <= p.u <= hi_u and lo_v <= p.v <= hi_v):
                    paths.append(name)
                    break
        if paths:
            raise ValidationFailure(f"invalid annotation: {', '.join(paths)}", paths=paths)

    def digest(self) -> str:
        """Content hash of the annotation, for caching derived results."""
        payload = {
            "option": self.option,
            "vertical_lines": _dump_lines(self.vertical_lines),
            "parallel_lines": _dump_lines(self.parallel_lines),
            "perpendicular_pair": _dump_lines(self.perpendicular_pair),
            "equal_segments": _dump_lines(self.equal_segments),
            "efov_polygon": [[_f9(p.u), _f9(p.v)] for p in self.efov_polygon],
        }
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _f9(x: float) -> float:
    return float(f"{x:.9g}")


def _dump_lines(lines: Sequence[ImageLine]) -> list:
    return [[[_f9(l.p1.u), _f9(l.p1.v)], [_f9(l.p2.u), _f9(l.p2.v)]] for l in lines]


def _line_points(lines: Sequence[ImageLine]) -> list[PixelPoint]:
    return [p for l in lines for p in (l.p1, l.p2)]


def _polygon_is_simple(vertices: Sequence[PixelPoint]) -> bool:
    """True when no two non-adjacent edges cross (O(n^2), n is tiny)."""
    n = len(vertices)
    edges = [(vertices[i], vertices[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_intersect(*edges[i], *edges[j]):
                return False
    return True


def _segments_intersect(a: PixelPoint, b: PixelPoint, c: PixelPoint, d: PixelPoint) -> bool:
    def cross(o, p, q):
        return (p.u - o.u) * (q.v - o.v) - (p.v - o.v) * (q.u - o.u)

    d1, d2 = cross(c, d, a), cross(c, d, b)
    d3, d4 = cross(a, b, c), cross(a, b, d)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


@dataclass(frozen=True)
class PartialCalibration:
    """Stage-1 result: roll/pitch/focal known, pose still at defaults."""

    roll: float
    pitch: float
    focal: float
    residual: float
    annotation_digest: str
    x0: float = 0.0
    y0: float = 0.0
    z0: float = DEFAULT_HEIGHT
    yaw: float = 0.0

    def __post_init__(self):
        if self.focal <= 0:
            raise ValueError("focal must be positive")
        if not -math.pi / 2 < self.pitch < math.pi / 2:
            raise ValueError(f"pitch {self.pitch} outside (-pi/2, pi/2)")
        if self.residual < 0:
            raise ValueError("residual must be non-negative")

    def pose(self) -> CameraPose:
        return CameraPose(self.x0, self.y0, self.z0, self.yaw, self.pitch, self.roll)

    def model(self, image_width: float, image_height: float) -> CameraModel:
        return CameraModel(self.pose(), CameraIntrinsics(self.focal, image_width, image_height))


@dataclass(frozen=True)
class FloorPolygon:
    """Polygon on the floor plane (all vertices at z = 0), meters."""

    vertices: tuple[WorldPoint, ...]

    def __post_init__(self):
        if len(self.vertices) < 3:
            raise ValueError("floor polygon needs at least 3 vertices")
        for v in self.vertices:
            if v.z != 0.0:
                raise ValueError(f"floor polygon vertex off the floor plane: {v}")
            if not all(math.isfinite(c) for c in v):
                raise ValueError(f"non-finite vertex: {v}")

    def xy(self) -> np.ndarray:
        return np.array([(v.x, v.y) for v in self.vertices])


class _CriterionEvaluator:
    """Vectorized geometric-consistency criterion for one annotation set.

    Endpoint pixel offsets are stacked once; each evaluation rebuilds one
    3x3 rotation and runs batched plane intersections. Camera x0/y0 never
    enter: every term is a difference of intersection points.

    Two value forms share the same zero set: the reported criterion
    (bounded terms, absolute values) and a smooth squared form the
    optimizer descends, which avoids the kink of |dot| at the solution.
    """

    def __init__(self, annotation: AnnotationSet, image_width: float, image_height: float):
        self.cx = image_width / 2.0
        self.cy = image_height / 2.0
        self.option = annotation.option
        self.vert = self._offsets(_line_points(annotation.vertical_lines))
        self.par = self._offsets(_line_points(annotation.parallel_lines))
        self.perp = self._offsets(_line_points(annotation.perpendicular_pair))
        self.seg = self._offsets(_line_points(annotation.equal_segments))
        self.n_vert = len(annotation.vertical_lines)
        self.n_par = len(annotation.parallel_lines)
        self.n_seg = len(annotation.equal_segments)

    def _offsets(self, pts: Sequence[PixelPoint]) -> np.ndarray:
        return np.array([(p.u - self.cx, p.v - self.cy) for p in pts]).reshape(-1, 2)

    def evaluate(self, roll: float, pitch: float, focal: float) -> tuple[float, int]:
        """Criterion under the stage-1 default pose (0, 0, 3 m, yaw 0)."""
        rot = _AXIS_SWAP @ compose_rotation(0.0, pitch, roll)
        return self._evaluate(rot, DEFAULT_HEIGHT, focal, smooth=False)

    def evaluate_smooth(self, roll: float, pitch: float, focal: float) -> tuple[float, int]:
        rot = _AXIS_SWAP @ compose_rotation(0.0, pitch, roll)
        return self._evaluate(rot, DEFAULT_HEIGHT, focal, smooth=True)

    def evaluate_model(self, m: CameraModel) -> tuple[float, int]:
        return self._evaluate(
            world_to_camera_rotation(m.pose), m.pose.z0, m.intrinsics.focal, smooth=False
        )

    def _intersect(self, d: np.ndarray, z0: float, h: float) -> tuple[np.ndarray, np.ndarray]:
        """Ray-plane hits at z = h for ray rows d from height z0; (points, ok)."""
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (h - z0) / d[:, 2]
        ok = np.isfinite(t) & (t > 1e-9)
        return t[:, None] * d, ok

    def _evaluate(
        self, rot_w2c: np.ndarray, z0: float, focal: float, smooth: bool
    ) -> tuple[float, int]:
        """Returns (value, infeasible point count).

        A nonzero count means some annotation ray missed its plane; the
        value is then a feasibility penalty, not the criterion.
        """

        def world_dirs(offsets: np.ndarray) -> np.ndarray:
            d_cam = np.empty((len(offsets), 3))
            d_cam[:, :2] = offsets / focal
            d_cam[:, 2] = 1.0
            return d_cam @ rot_w2c

        bad = 0
        d_vert = world_dirs(self.vert)
        v0, ok0 = self._intersect(d_vert, z0, 0.0)
        v1, ok1 = self._intersect(d_vert, z0, 1.0)
        bad += int((~ok0).sum()) + int((~ok1).sum())

        d_floor = {}
        for name, offsets in (("par", self.par), ("perp", self.perp), ("seg", self.seg)):
            if len(offsets) == 0:
                continue
            pts, ok = self._intersect(world_dirs(offsets), z0, 0.0)
            bad += int((~ok).sum())
            d_floor[name] = pts
        if bad:
            return 1e6 * (1.0 + bad), bad

        value = 0.0

        # verticality: intersect each line's two rays with z=0 and z=1 and
        # take the connector perpendicular to the floor trace; it is vertical
        # exactly when the line's interpretation plane is vertical
        p0 = v0.reshape(self.n_vert, 2, 3)
        p1 = v1.reshape(self.n_vert, 2, 3)
        u = p0[:, 1, :2] - p0[:, 0, :2]
        un = np.linalg.norm(u, axis=1)
        if np.any(un < 1e-12):
            return 2e6, 1
        u /= un[:, None]
        w = p1[:, 0, :2] - p0[:, 0, :2]
        w_perp_sq = ((w - (w * u).sum(axis=1)[:, None] * u) ** 2).sum(axis=1)
        if smooth:
            value += float(np.mean(w_perp_sq))
        else:
            # the z gap between the planes is exactly 1, so the connector is
            # (w_perp, 1) and the per-line term is 1 - |cos(angle to up)|
            value += float(np.mean(1.0 - 1.0 / np.sqrt(1.0 + w_perp_sq)))

        def unit_dirs(pts: np.ndarray, count: int) -> np.ndarray:
            p = pts.reshape(count, 2, 3)
            v = p[:, 1, :2] - p[:, 0, :2]
            n = np.linalg.norm(v, axis=1)
            return v / n[:, None]

        if self.option == OPTION1:
            dirs = unit_dirs(d_floor["par"], self.n_par)
            dots = [
                float(dirs[i] @ dirs[j])
                for i, j in itertools.combinations(range(self.n_par), 2)
            ]
            pd = unit_dirs(d_floor["perp"], 2)
            perp_dot = float(pd[0] @ pd[1])
            if smooth:
                value += float(np.mean([1.0 - d * d for d in dots]))
                value += perp_dot * perp_dot
            else:
                value += float(np.mean([abs(1.0 - abs(d)) for d in dots]))
                value += abs(perp_dot)
        else:
            p = d_floor["seg"].reshape(self.n_seg, 2, 3)
            lengths = np.linalg.norm(p[:, 1, :2] - p[:, 0, :2], axis=1)
            mean = lengths.mean()
            if smooth:
                value += float(lengths.var() / (mean * mean))
            else:
                value += float((lengths.max() - lengths.min()) / mean)
        return value, 0


def evaluate_criterion(annotation: AnnotationSet, params: CameraModel) -> float:
    """Geometric-consistency value for an annotation under trial parameters.

    Non-negative, and zero exactly when every annotated rule holds after
    projecting into the world frame. Raises ProjectionFailure when any
    required annotation point has no forward plane intersection (the
    parameter set is infeasible, not scored).
    """
    annotation.validate(params.intrinsics.image_width, params.intrinsics.image_height)
    ev = _CriterionEvaluator(
        annotation, params.intrinsics.image_width, params.intrinsics.image_height
    )
    value, bad = ev.evaluate_model(params)
    if bad:
        raise ProjectionFailure(f"{bad} annotation rays miss their plane", count=bad)
    return value


def solve_partial(
    annotation: AnnotationSet, image_width: float, image_height: float
) -> PartialCalibration:
    """Recover (roll, pitch, focal) from one annotation set.

    Roll is fixed first from the verticals' vanishing point; pitch and focal
    length then minimize the criterion by a deterministic multi-start
    Nelder-Mead search (focal optimized in log space). Position and yaw stay
    at the stage-1 defaults.
    """
    # vertical-line sufficiency is checked first so missing verticals surface
    # as DegenerateLines rather than a generic validation failure
    if len(annotation.vertical_lines) < 2:
        raise DegenerateLines(
            f"need at least 2 vertical lines, got {len(annotation.vertical_lines)}"
        )
    annotation.validate(image_width, image_height)
    vp, _ = estimate_vanishing_point(annotation.vertical_lines)
    roll = roll_from_vertical_vp(vp, PixelPoint(image_width / 2.0, image_height / 2.0))

    ev = _CriterionEvaluator(annotation, image_width, image_height)
    lo_f = FOCAL_BOUNDS_WIDTHS[0] * image_width
    hi_f = FOCAL_BOUNDS_WIDTHS[1] * image_width
    bounds = [PITCH_BOUNDS, (math.log(lo_f), math.log(hi_f))]

    # the search descends the smooth squared form (same zero set, no kink at
    # the optimum); the reported residual is the criterion itself
    def objective(x: np.ndarray) -> float:
        value, _ = ev.evaluate_smooth(roll, x[0], math.exp(x[1]))
        return value

    def run(x0: np.ndarray, options: dict) -> tuple[float, int, np.ndarray]:
        res = minimize(objective, x0, method="Nelder-Mead", bounds=bounds, options=options)
        value, bad = ev.evaluate_smooth(roll, float(res.x[0]), math.exp(float(res.x[1])))
        return value, bad, res.x

    # coarse exploration over the start grid locates the right basin
    explore = {"xatol": 1e-5, "fatol": 1e-14, "maxiter": 150}
    best: tuple[float, np.ndarray] | None = None
    feasible_seen = False
    for pitch0 in START_PITCHES:
        for focal0 in START_FOCALS:
            value, bad, x = run(np.array([pitch0, math.log(focal0 * image_width)]), explore)
            if bad == 0:
                feasible_seen = True
                if best is None or value < best[0]:
                    best = (value, x)
        if best is not None and best[0] < 1e-11:
            break
    if not feasible_seen or best is None:
        raise InfeasibleGeometry("no optimizer start projected the annotation to the floor")

    # repeated restarts from the winner: each fresh simplex re-expands and
    # moves fast along the narrow pitch/focal valley of the criterion
    polish = {"xatol": 1e-13, "fatol": 1e-24, "maxiter": 600}
    for _ in range(8):
        value, bad, x = run(best[1], polish)
        if bad != 0 or not value < best[0]:
            break
        improved = value < 0.25 * best[0]
        best = (value, x)
        if best[0] < 1e-24 or not improved:
            break

    pitch, focal = float(best[1][0]), float(math.exp(best[1][1]))
    residual, bad = ev.evaluate(roll, pitch, focal)
    if bad or residual > CONVERGENCE_TOL:
        raise NonConvergence(
            f"best criterion value {residual:.3g} above tolerance {CONVERGENCE_TOL}"
        )
    return PartialCalibration(
        roll=roll,
        pitch=pitch,
        focal=focal,
        residual=residual,
        annotation_digest=annotation.digest(),
    )


def project_efov(
    annotation: AnnotationSet,
    partial: PartialCalibration,
    image_width: float,
    image_height: float,
) -> FloorPolygon:
    """Project the drawn field-of-view polygon onto the floor plane.

    Uses the partial model (defaulted pose), so the result has correct
    proportions up to a planar similarity. Raises HorizonViolation listing
    the vertex indices whose rays miss the floor.
    """
    m = partial.model(image_width, image_height)
    uv = np.array([(p.u, p.v) for p in annotation.efov_polygon])
    pts, valid = project_pixels_to_plane(uv, 0.0, m)
    if not valid.all():
        bad = [int(i) for i in np.flatnonzero(~valid)]
        raise HorizonViolation(
            f"field-of-view vertices {bad} are drawn past the horizon", vertices=bad
        )
    return FloorPolygon(tuple(WorldPoint(x, y, 0.0) for x, y, _ in pts))
