"""Durable project documents: cameras, annotations, calibration state.

Operator inputs (annotations, placement transforms) are the source of
truth; stage-1 results are cached alongside them with a content digest so
every derived value can be recomputed and audited. Documents are canonical
JSON: sorted keys, floats at 9 significant digits, so identical projects
serialize byte-identically.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

from .distortion import DistortionModel
from .errors import (
    IoFailure,
    ParseFailure,
    SchemaFailure,
    StaleVersion,
    UnknownId,
    ValidationFailure,
)
from .model import CameraModel, PixelPoint, WorldPoint
from .stage1 import (
    AnnotationSet,
    PartialCalibration,
    project_efov,
    solve_partial,
)
from .stage2 import (
    PlacementTransform,
    VirtualMarker,
    apply_placement,
    assemble_full_calibration,
)
from .vanishing import ImageLine

SCHEMA_VERSION = 1

#: forward migrations keyed by source version; none are needed yet, but the
#: loader walks this chain so old documents keep working once versions bump
_MIGRATIONS: dict[int, callable] = {}


class IncompleteCalibration(Exception):
    """Camera record lacks an input stage; ``stage`` names the first one."""

    def __init__(self, stage: str):
        super().__init__(f"calibration incomplete: missing {stage}")
        self.stage = stage


@dataclass(frozen=True)
class ImageRef:
    """Content-hash reference to an uploaded image plus its dimensions."""

    width: float
    height: float
    blob: Optional[str] = None

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")


@dataclass(frozen=True)
class Floorplan:
    image: Optional[ImageRef]
    meters_per_pixel: float
    origin_offset: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not (math.isfinite(self.meters_per_pixel) and self.meters_per_pixel > 0):
            raise ValueError("meters_per_pixel must be positive")


@dataclass(frozen=True)
class CameraRecord:
    id: str
    image: ImageRef
    distortion: Optional[DistortionModel] = None
    annotation: Optional[AnnotationSet] = None
    partial: Optional[PartialCalibration] = None
    placement: Optional[PlacementTransform] = None


@dataclass(frozen=True)
class Project:
    id: str
    name: str
    cameras: tuple[CameraRecord, ...] = ()
    markers: tuple[VirtualMarker, ...] = ()
    floorplan: Optional[Floorplan] = None


def validate_project(p: Project) -> None:
    """Check cross-field invariants; raise ValidationFailure with paths."""
    paths = []
    seen = set()
    for i, cam in enumerate(p.cameras):
        prefix = f"cameras[{i}]"
        if cam.id in seen:
            paths.append(f"{prefix}.id")
        seen.add(cam.id)
        if cam.placement is not None and cam.partial is None:
            paths.append(f"{prefix}.placement")
        if cam.partial is not None and cam.annotation is None:
            paths.append(f"{prefix}.partial")
        if cam.annotation is not None:
            try:
                cam.annotation.validate(cam.image.width, cam.image.height)
            except ValidationFailure as e:
                paths.extend(f"{prefix}.annotation.{sub}" for sub in e.details["paths"])
    marker_ids = [m.id for m in p.markers]
    if len(marker_ids) != len(set(marker_ids)):
        paths.append("markers")
    if paths:
        raise ValidationFailure(f"invalid project: {', '.join(paths)}", paths=paths)


def derive_model(c: CameraRecord) -> CameraModel:
    """Recompute the full camera model from the stored input chain.

    annotation -> partial (cached result reused when its digest matches)
    -> placement -> model. Raises IncompleteCalibration naming the first
    missing stage; stage-1/stage-2 computation errors propagate.
    """
    if c.annotation is None:
        raise IncompleteCalibration("annotation")
    partial = c.partial
    if partial is None or partial.annotation_digest != c.annotation.digest():
        partial = solve_partial(c.annotation, c.image.width, c.image.height)
    if c.placement is None:
        raise IncompleteCalibration("placement")
    pose = apply_placement(partial, c.placement)
    return assemble_full_calibration(partial, pose, c.image.width, c.image.height)


def camera_is_calibrated(c: CameraRecord) -> bool:
    return c.annotation is not None and c.partial is not None and c.placement is not None


# --- canonical (de)serialization ----------------------------------------------

def _f9(x: float) -> float:
    return float(f"{float(x):.9g}")


def _pt(p) -> list[float]:
    return [_f9(p[0]), _f9(p[1])]


def _line(l: ImageLine) -> list[list[float]]:
    return [_pt(l.p1), _pt(l.p2)]


def _annotation_to_doc(a: AnnotationSet) -> dict:
    return {
        "option": a.option,
        "vertical_lines": [_line(l) for l in a.vertical_lines],
        "parallel_lines": [_line(l) for l in a.parallel_lines],
        "perpendicular_pair": [_line(l) for l in a.perpendicular_pair],
        "equal_segments": [_line(l) for l in a.equal_segments],
        "efov_polygon": [_pt(p) for p in a.efov_polygon],
        "distortion_polylines": [[_pt(p) for p in pl] for pl in a.distortion_polylines],
    }


def _annotation_from_doc(doc: dict) -> AnnotationSet:
    def lines(key):
        return tuple(
            ImageLine(PixelPoint(*l[0]), PixelPoint(*l[1])) for l in doc.get(key, [])
        )

    return AnnotationSet(
        option=doc["option"],
        vertical_lines=lines("vertical_lines"),
        parallel_lines=lines("parallel_lines"),
        perpendicular_pair=lines("perpendicular_pair"),
        equal_segments=lines("equal_segments"),
        efov_polygon=tuple(PixelPoint(*p) for p in doc.get("efov_polygon", [])),
        distortion_polylines=tuple(
            tuple(PixelPoint(*p) for p in pl) for pl in doc.get("distortion_polylines", [])
        ),
    )


def project_to_document(p: Project) -> dict:
    """Canonical JSON-compatible tree; see docs/project-format.md."""
    validate_project(p)
    cameras = []
    for c in p.cameras:
        cameras.append(
            {
                "id": c.id,
                "image": {
                    "blob": c.image.blob,
                    "width": _f9(c.image.width),
                    "height": _f9(c.image.height),
                },
                "distortion": None
                if c.distortion is None
                else {
                    "k1": _f9(c.distortion.k1),
                    "k2": _f9(c.distortion.k2),
                    "normalization_radius": _f9(c.distortion.normalization_radius),
                },
                "annotation": None if c.annotation is None else _annotation_to_doc(c.annotation),
                "partial": None
                if c.partial is None
                else {
                    "roll": _f9(c.partial.roll),
                    "pitch": _f9(c.partial.pitch),
                    "focal": _f9(c.partial.focal),
                    "residual": _f9(c.partial.residual),
                    "annotation_digest": c.partial.annotation_digest,
                },
                "placement": None
                if c.placement is None
                else {
                    "dx": _f9(c.placement.dx),
                    "dy": _f9(c.placement.dy),
                    "scale": _f9(c.placement.scale),
                    "theta": _f9(c.placement.theta),
                },
            }
        )
    return {
        "schema_version": SCHEMA_VERSION,
        "name": p.name,
        "floorplan": None
        if p.floorplan is None
        else {
            "image": None
            if p.floorplan.image is None
            else {
                "blob": p.floorplan.image.blob,
                "width": _f9(p.floorplan.image.width),
                "height": _f9(p.floorplan.image.height),
            },
            "meters_per_pixel": _f9(p.floorplan.meters_per_pixel),
            "origin_offset": [_f9(p.floorplan.origin_offset[0]), _f9(p.floorplan.origin_offset[1])],
        },
        "cameras": cameras,
        "markers": [
            {
                "id": m.id,
                "shape": m.shape,
                "position": [_f9(m.position.x), _f9(m.position.y), _f9(m.position.z)],
                "side": _f9(m.side),
                "height": _f9(m.height),
            }
            for m in p.markers
        ],
    }


def document_to_project(doc: dict, project_id: str = "") -> Project:
    """Validate and materialize a document tree; migrate old versions."""
    if not isinstance(doc, dict) or "schema_version" not in doc:
        raise ParseFailure("document is not a project (missing schema_version)")
    version = doc["schema_version"]
    if not isinstance(version, int) or version < 1 or version > SCHEMA_VERSION:
        raise SchemaFailure(f"unknown schema version {version!r}")
    while version < SCHEMA_VERSION:
        doc = _MIGRATIONS[version](doc)
        version = doc["schema_version"]
    try:
        cameras = []
        for c in doc.get("cameras", []):
            img = c["image"]
            cameras.append(
                CameraRecord(
                    id=c["id"],
                    image=ImageRef(width=img["width"], height=img["height"], blob=img.get("blob")),
                    distortion=None
                    if c.get("distortion") is None
                    else DistortionModel(
                        k1=c["distortion"]["k1"],
                        k2=c["distortion"]["k2"],
                        normalization_radius=c["distortion"]["normalization_radius"],
                    ),
                    annotation=None
                    if c.get("annotation") is None
                    else _annotation_from_doc(c["annotation"]),
                    partial=None
                    if c.get("partial") is None
                    else PartialCalibration(
                        roll=c["partial"]["roll"],
                        pitch=c["partial"]["pitch"],
                        focal=c["partial"]["focal"],
                        residual=c["partial"]["residual"],
                        annotation_digest=c["partial"]["annotation_digest"],
                    ),
                    placement=None
                    if c.get("placement") is None
                    else PlacementTransform(
                        dx=c["placement"]["dx"],
                        dy=c["placement"]["dy"],
                        scale=c["placement"]["scale"],
                        theta=c["placement"]["theta"],
                    ),
                )
            )
        fp = doc.get("floorplan")
        floorplan = None
        if fp is not None:
            fp_img = fp.get("image")
            floorplan = Floorplan(
                image=None
                if fp_img is None
                else ImageRef(width=fp_img["width"], height=fp_img["height"], blob=fp_img.get("blob")),
                meters_per_pixel=fp["meters_per_pixel"],
                origin_offset=tuple(fp.get("origin_offset", (0.0, 0.0))),
            )
        markers = tuple(
            VirtualMarker(
                id=m["id"],
                shape=m["shape"],
                position=WorldPoint(*m["position"]),
                side=m.get("side", 0.0),
                height=m.get("height", 0.0),
            )
            for m in doc.get("markers", [])
        )
        project = Project(
            id=project_id,
            name=doc.get("name", ""),
            cameras=tuple(cameras),
            markers=markers,
            floorplan=floorplan,
        )
    except ValidationFailure:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise ValidationFailure(f"malformed project document: {e}", paths=[]) from e
    validate_project(project)
    return project


def dumps_project(p: Project) -> str:
    return json.dumps(project_to_document(p), sort_keys=True, indent=2) + "\n"


def loads_project(text: str, project_id: str = "") -> Project:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseFailure(f"not valid JSON: {e}") from e
    return document_to_project(doc, project_id)


def save_project(p: Project, destination: str | Path) -> dict:
    """Write the canonical document; returns the document tree."""
    doc = project_to_document(p)
    try:
        Path(destination).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    except OSError as e:
        raise IoFailure(f"cannot write {destination}: {e}") from e
    return doc


def load_project(source: str | Path) -> Project:
    path = Path(source)
    try:
        text = path.read_text()
    except OSError as e:
        raise IoFailure(f"cannot read {source}: {e}") from e
    return loads_project(text, project_id=path.stem)


# --- stage pipeline helpers shared by service and CLI --------------------------

def run_stage1(record: CameraRecord) -> CameraRecord:
    """Fit distortion (once), undistort the annotation, solve stage 1.

    Returns the updated record with distortion, undistorted annotation and
    cached partial calibration. The distortion fit only runs while the
    record has none, so reprocessing is idempotent.
    """
    if record.annotation is None:
        raise IncompleteCalibration("annotation")
    annotation = record.annotation
    distortion = record.distortion
    if distortion is None and annotation.distortion_polylines:
        from .distortion import fit_distortion, undistort_pixels

        distortion, _ = fit_distortion(
            annotation.distortion_polylines, record.image.width, record.image.height
        )
        center = PixelPoint(record.image.width / 2.0, record.image.height / 2.0)

        def fix_line(l: ImageLine) -> ImageLine:
            return ImageLine(
                undistort_pixels([l.p1], distortion, center)[0],
                undistort_pixels([l.p2], distortion, center)[0],
            )

        annotation = replace(
            annotation,
            vertical_lines=tuple(fix_line(l) for l in annotation.vertical_lines),
            parallel_lines=tuple(fix_line(l) for l in annotation.parallel_lines),
            perpendicular_pair=tuple(fix_line(l) for l in annotation.perpendicular_pair),
            equal_segments=tuple(fix_line(l) for l in annotation.equal_segments),
            efov_polygon=tuple(
                undistort_pixels(annotation.efov_polygon, distortion, center)
            ),
        )
    partial = solve_partial(annotation, record.image.width, record.image.height)
    return replace(record, annotation=annotation, distortion=distortion, partial=partial)


def run_placement(record: CameraRecord, t: PlacementTransform) -> CameraRecord:
    if record.partial is None:
        raise IncompleteCalibration("partial")
    return replace(record, placement=t)


# --- optimistic-concurrency store ---------------------------------------------

class ProjectStore:
    """In-memory project store with optimistic version tokens.

    Reads are unrestricted; writes are serialized and rejected when the
    caller's token no longer matches. When a root directory is given, every
    accepted write also persists the canonical document (and blobs) there.
    """

    def __init__(self, root: str | Path | None = None):
        self._lock = threading.Lock()
        self._projects: dict[str, tuple[Project, int]] = {}
        self._blobs: dict[str, bytes] = {}
        self._root = Path(root) if root is not None else None
        if self._root is not None:
            (self._root / "projects").mkdir(parents=True, exist_ok=True)
            (self._root / "blobs").mkdir(parents=True, exist_ok=True)
            for f in sorted((self._root / "projects").glob("*.json")):
                self._projects[f.stem] = (load_project(f), 1)
            for f in sorted((self._root / "blobs").glob("*")):
                self._blobs[f.name] = f.read_bytes()

    def create(self, p: Project) -> int:
        with self._lock:
            if p.id in self._projects:
                raise ValidationFailure(f"project {p.id} already exists", paths=["id"])
            validate_project(p)
            self._projects[p.id] = (p, 1)
            self._persist(p)
            return 1

    def get(self, project_id: str) -> tuple[Project, int]:
        try:
            return self._projects[project_id]
        except KeyError:
            raise UnknownId(f"no project {project_id!r}") from None

    def update(self, p: Project, expected_version: int) -> int:
        with self._lock:
            if p.id not in self._projects:
                raise UnknownId(f"no project {p.id!r}")
            _, version = self._projects[p.id]
            if version != expected_version:
                raise StaleVersion(
                    f"project {p.id} is at version {version}, caller had {expected_version}"
                )
            validate_project(p)
            self._projects[p.id] = (p, version + 1)
            self._persist(p)
            return version + 1

    def put_blob(self, data: bytes) -> str:
        import hashlib

        digest = hashlib.sha256(data).hexdigest()
        with self._lock:
            self._blobs[digest] = data
            if self._root is not None:
                (self._root / "blobs" / digest).write_bytes(data)
        return digest

    def get_blob(self, digest: str) -> bytes:
        try:
            return self._blobs[digest]
        except KeyError:
            raise UnknownId(f"no blob {digest!r}") from None

    def _persist(self, p: Project) -> None:
        if self._root is not None:
            save_project(p, self._root / "projects" / f"{p.id}.json")
