"""HTTP API for the calibration workflow.

Thin JSON layer over the library: every number it returns equals the
corresponding direct library call, formatted canonically (9 significant
digits) so identical request sequences produce byte-identical responses.
Mutations carry the project version token; a stale token gets 409 and
leaves the store untouched.

Angles are radians by default; pass ?units=deg to submit and receive
degrees on the computation endpoints.
"""

from __future__ import annotations

import math
from dataclasses import replace
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response

from .errors import (
    AmbiguousRoll,
    CalibrationError,
    DegenerateLines,
    HorizonViolation,
    InfeasibleGeometry,
    InsufficientData,
    NonConvergence,
    ProjectionFailure,
    StaleVersion,
    UnknownId,
    ValidationFailure,
)
from .stage1 import project_efov
from .stage2 import (
    PlacementTransform,
    VirtualMarker,
    apply_placement,
    assemble_full_calibration,
    backproject_prism,
    project_virtual_marker,
)
from .store import (
    CameraRecord,
    IncompleteCalibration,
    Project,
    ProjectStore,
    _annotation_from_doc,
    camera_is_calibrated,
    derive_model,
    document_to_project,
    project_to_document,
    run_placement,
    run_stage1,
)
from .model import WorldPoint

#: errors the stage-1/stage-2 endpoints report as 422 with a reason code
_UNPROCESSABLE = (
    AmbiguousRoll,
    DegenerateLines,
    HorizonViolation,
    InfeasibleGeometry,
    InsufficientData,
    NonConvergence,
    ProjectionFailure,
    ValidationFailure,
)


def _f9(x: float) -> float:
    return float(f"{float(x):.9g}")


def _envelope(status: int, code: str, message: str, details: Optional[dict] = None) -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content={"code": code, "message": message, "details": details or {}},
    )


def _error(status: int, exc: Exception) -> JSONResponse:
    code = getattr(exc, "code", type(exc).__name__)
    details = getattr(exc, "details", {})
    return _envelope(status, code, str(exc), details)


def _angles_out(value: float, deg: bool) -> float:
    return _f9(math.degrees(value)) if deg else _f9(value)


def _angle_in(value: float, deg: bool) -> float:
    return math.radians(value) if deg else value


def _use_degrees(request: Request) -> bool:
    return request.query_params.get("units") == "deg"


def _pixel_list(points) -> list:
    return [None if p is None else [_f9(p.u), _f9(p.v)] for p in points]


def _marker_overlays(project: Project) -> dict:
    """Marker outline pixels for every calibrated camera, keyed by id."""
    calibrated = [(c, derive_model(c)) for c in project.cameras if camera_is_calibrated(c)]
    overlays: dict[str, dict] = {}
    for cam_record, model in calibrated:
        per_camera = {}
        for marker in project.markers:
            (points,) = project_virtual_marker(marker, [model])
            per_camera[marker.id] = None if points is None else _pixel_list(points)
        overlays[cam_record.id] = per_camera
    return overlays


def _placement_payload(project: Project, record: CameraRecord, deg: bool) -> dict:
    model = derive_model(record)
    pose = model.pose
    annotation = record.annotation
    efov3d = project_efov(annotation, record.partial, record.image.width, record.image.height)
    from .stage2 import transform_floor_polygon

    placed = transform_floor_polygon(efov3d, record.placement)
    prism = backproject_prism(placed, model)
    markers = {}
    for marker in project.markers:
        (points,) = project_virtual_marker(marker, [model])
        markers[marker.id] = None if points is None else _pixel_list(points)
    return {
        "pose": {
            "x0": _f9(pose.x0),
            "y0": _f9(pose.y0),
            "z0": _f9(pose.z0),
            "yaw": _angles_out(pose.yaw, deg),
            "pitch": _angles_out(pose.pitch, deg),
            "roll": _angles_out(pose.roll, deg),
        },
        "model": {
            "x0": _f9(pose.x0),
            "y0": _f9(pose.y0),
            "z0": _f9(pose.z0),
            "yaw": _angles_out(pose.yaw, deg),
            "pitch": _angles_out(pose.pitch, deg),
            "roll": _angles_out(pose.roll, deg),
            "focal": _f9(model.intrinsics.focal),
            "image_width": _f9(model.intrinsics.image_width),
            "image_height": _f9(model.intrinsics.image_height),
        },
        "prism": {
            "base": _pixel_list(prism.base),
            "top": _pixel_list(prism.top),
            "base_visible": list(prism.base_visible),
            "top_visible": list(prism.top_visible),
        },
        "markers": markers,
    }


def create_app(store: ProjectStore | None = None) -> FastAPI:
    store = store if store is not None else ProjectStore()
    app = FastAPI(title="scenecalib", version="0.1.0", description=__doc__)
    counter = {"projects": 0}

    def _find_camera(project: Project, camera_id: str) -> CameraRecord:
        for c in project.cameras:
            if c.id == camera_id:
                return c
        raise UnknownId(f"no camera {camera_id!r} in project {project.id!r}")

    def _replace_camera(project: Project, record: CameraRecord) -> Project:
        cameras = tuple(record if c.id == record.id else c for c in project.cameras)
        return replace(project, cameras=cameras)

    # --- project CRUD ---------------------------------------------------

    @app.post("/projects", status_code=201)
    async def create_project(body: dict):
        counter["projects"] += 1
        project_id = f"p{counter['projects']}"
        try:
            if "project" in body:
                project = document_to_project(body["project"], project_id)
            else:
                project = Project(id=project_id, name=body.get("name", ""))
            version = store.create(project)
        except ValidationFailure as e:
            return _error(400, e)
        except CalibrationError as e:
            return _error(400, e)
        return {"id": project_id, "version": version}

    @app.get("/projects/{project_id}")
    async def get_project(project_id: str):
        try:
            project, version = store.get(project_id)
        except UnknownId as e:
            return _error(404, e)
        return {"project": project_to_document(project), "version": version}

    @app.put("/projects/{project_id}")
    async def put_project(project_id: str, body: dict):
        try:
            project = document_to_project(body["project"], project_id)
            version = store.update(project, expected_version=body.get("version", 0))
        except KeyError:
            return _envelope(400, "ValidationFailure", "body must carry 'project'")
        except ValidationFailure as e:
            return _error(400, e)
        except StaleVersion as e:
            return _error(409, e)
        except UnknownId as e:
            return _error(404, e)
        return {"version": version}

    # --- blobs ------------------------------------------------------------

    @app.put("/blobs")
    async def put_blob(request: Request):
        data = await request.body()
        return {"hash": store.put_blob(data)}

    @app.get("/blobs/{digest}")
    async def get_blob(digest: str):
        try:
            data = store.get_blob(digest)
        except UnknownId as e:
            return _error(404, e)
        return Response(content=data, media_type="application/octet-stream")

    # --- stage 1: annotation ----------------------------------------------

    @app.post("/projects/{project_id}/cameras/{camera_id}/annotation")
    async def post_annotation(project_id: str, camera_id: str, body: dict, request: Request):
        deg = _use_degrees(request)
        try:
            project, version = store.get(project_id)
            record = _find_camera(project, camera_id)
        except UnknownId as e:
            return _error(404, e)
        try:
            annotation = _annotation_from_doc(body["annotation"])
        except (KeyError, TypeError, ValueError, IndexError) as e:
            return _envelope(422, "ValidationFailure", f"malformed annotation: {e}")
        try:
            updated = run_stage1(replace(record, annotation=annotation, partial=None))
            efov3d = project_efov(
                updated.annotation, updated.partial, record.image.width, record.image.height
            )
            new_version = store.update(
                _replace_camera(project, updated), expected_version=body.get("version", version)
            )
        except _UNPROCESSABLE as e:
            return _error(422, e)
        except StaleVersion as e:
            return _error(409, e)
        partial = updated.partial
        return {
            "version": new_version,
            "partial": {
                "roll": _angles_out(partial.roll, deg),
                "pitch": _angles_out(partial.pitch, deg),
                "focal": _f9(partial.focal),
                "residual": _f9(partial.residual),
            },
            "distortion": None
            if updated.distortion is None
            else {
                "k1": _f9(updated.distortion.k1),
                "k2": _f9(updated.distortion.k2),
                "normalization_radius": _f9(updated.distortion.normalization_radius),
            },
            "efov_floor": [[_f9(v.x), _f9(v.y)] for v in efov3d.vertices],
        }

    # --- stage 2: placement -------------------------------------------------

    @app.put("/projects/{project_id}/cameras/{camera_id}/placement")
    async def put_placement(project_id: str, camera_id: str, body: dict, request: Request):
        deg = _use_degrees(request)
        try:
            project, version = store.get(project_id)
            record = _find_camera(project, camera_id)
        except UnknownId as e:
            return _error(404, e)
        if record.partial is None:
            return _envelope(
                409, "IncompleteCalibration", f"camera {camera_id} has no stage-1 result"
            )
        try:
            transform = PlacementTransform(
                dx=float(body["dx"]),
                dy=float(body["dy"]),
                scale=float(body["scale"]),
                theta=_angle_in(float(body["theta"]), deg),
            )
        except (KeyError, TypeError, ValueError) as e:
            return _envelope(422, "ValidationFailure", f"invalid transform: {e}")
        try:
            updated = run_placement(record, transform)
            payload = _placement_payload(project, updated, deg)
            new_version = store.update(
                _replace_camera(project, updated), expected_version=body.get("version", version)
            )
        except _UNPROCESSABLE as e:
            return _error(422, e)
        except StaleVersion as e:
            return _error(409, e)
        return {"version": new_version, **payload}

    # --- markers --------------------------------------------------------------

    @app.post("/projects/{project_id}/markers")
    async def post_marker(project_id: str, body: dict):
        try:
            project, version = store.get(project_id)
        except UnknownId as e:
            return _error(404, e)
        try:
            m = body["marker"]
            marker = VirtualMarker(
                id=m["id"],
                shape=m["shape"],
                position=WorldPoint(*[float(v) for v in m["position"]]),
                side=float(m.get("side", 0.0)),
                height=float(m.get("height", 0.0)),
            )
        except (KeyError, TypeError, ValueError) as e:
            return _envelope(422, "ValidationFailure", f"invalid marker: {e}")
        markers = tuple(x for x in project.markers if x.id != marker.id) + (marker,)
        try:
            new_version = store.update(
                replace(project, markers=markers), expected_version=body.get("version", version)
            )
        except StaleVersion as e:
            return _error(409, e)
        except ValidationFailure as e:
            return _error(422, e)
        updated, _ = store.get(project_id)
        return {"version": new_version, "overlays": _marker_overlays(updated)}

    @app.get("/projects/{project_id}/markers/overlays")
    async def get_overlays(project_id: str):
        try:
            project, version = store.get(project_id)
        except UnknownId as e:
            return _error(404, e)
        if not any(camera_is_calibrated(c) for c in project.cameras):
            return _envelope(409, "IncompleteCalibration", "no calibrated cameras in project")
        return {"version": version, "overlays": _marker_overlays(project)}

    return app
