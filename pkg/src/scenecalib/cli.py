"""Headless pipeline for batch and CI use.

Exit codes are frozen for CI: 0 success, 2 validation or missing input,
3 optimizer non-convergence, 4 I/O failure. Reason codes go to stderr.
Angles on flags are radians unless --deg is given; lengths are meters.
"""

from __future__ import annotations

import json
import math
import sys
from dataclasses import replace

import click

from .errors import (
    CalibrationError,
    InfeasibleGeometry,
    IoFailure,
    NonConvergence,
)
from .model import projection_matrix
from .stage2 import PlacementTransform, apply_placement
from .store import (
    IncompleteCalibration,
    Project,
    camera_is_calibrated,
    derive_model,
    load_project,
    run_placement,
    run_stage1,
    save_project,
)
from .verify import run_verification

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_CONVERGENCE = 3
EXIT_IO = 4


def _fail(exc: Exception) -> int:
    code = getattr(exc, "code", type(exc).__name__)
    click.echo(f"error: {code}: {exc}", err=True)
    if isinstance(exc, (NonConvergence, InfeasibleGeometry)):
        return EXIT_CONVERGENCE
    if isinstance(exc, (IoFailure, OSError)):
        return EXIT_IO
    return EXIT_VALIDATION


def _f9(x: float) -> str:
    return f"{x:.9g}"


def _load(path: str) -> Project:
    return load_project(path)


def _camera(project: Project, camera_id: str):
    for c in project.cameras:
        if c.id == camera_id:
            return c
    raise CalibrationError(f"no camera {camera_id!r} in project")


@click.group()
def main():
    """Two-stage camera calibration from annotated scene geometry."""


@main.command()
@click.option("--project", "project_path", required=True, type=click.Path())
@click.option("--camera", "camera_id", required=True)
def stage1(project_path: str, camera_id: str):
    """Solve roll, pitch and focal length from a camera's annotation."""
    try:
        project = _load(project_path)
        record = _camera(project, camera_id)
        if record.annotation is None:
            raise CalibrationError(f"camera {camera_id!r} has no annotation")
        updated = run_stage1(record)
        cameras = tuple(updated if c.id == camera_id else c for c in project.cameras)
        save_project(replace(project, cameras=cameras), project_path)
    except (CalibrationError, IncompleteCalibration, OSError) as e:
        sys.exit(_fail(e))
    p = updated.partial
    click.echo(
        f"residual={_f9(p.residual)} roll={_f9(p.roll)} pitch={_f9(p.pitch)} focal={_f9(p.focal)}"
    )


@main.command()
@click.option("--project", "project_path", required=True, type=click.Path())
@click.option("--camera", "camera_id", required=True)
@click.option("--dx", type=float, required=True, help="camera x position, meters")
@click.option("--dy", type=float, required=True, help="camera y position, meters")
@click.option("--scale", type=float, required=True, help="polygon scale factor")
@click.option("--theta", type=float, required=True, help="polygon rotation (yaw)")
@click.option("--deg", is_flag=True, help="interpret --theta in degrees")
@click.option("--dry-run", is_flag=True, help="print the pose without writing")
def place(project_path, camera_id, dx, dy, scale, theta, deg, dry_run):
    """Fix camera position, height and yaw from a polygon placement."""
    try:
        project = _load(project_path)
        record = _camera(project, camera_id)
        if record.partial is None:
            raise CalibrationError(f"camera {camera_id!r} has no stage-1 result")
        transform = PlacementTransform(
            dx=dx, dy=dy, scale=scale, theta=math.radians(theta) if deg else theta
        )
        pose = apply_placement(record.partial, transform)
        if not dry_run:
            updated = run_placement(record, transform)
            cameras = tuple(updated if c.id == camera_id else c for c in project.cameras)
            save_project(replace(project, cameras=cameras), project_path)
    except ValueError as e:
        sys.exit(_fail(CalibrationError(str(e))))
    except (CalibrationError, IncompleteCalibration, OSError) as e:
        sys.exit(_fail(e))
    click.echo(
        f"x0={_f9(pose.x0)} y0={_f9(pose.y0)} z0={_f9(pose.z0)} yaw={_f9(pose.yaw)}"
    )


@main.command()
@click.option("--project", "project_path", required=True, type=click.Path())
def verify(project_path: str):
    """Run the invariant suite on all calibrated cameras."""
    try:
        project = _load(project_path)
        if not any(camera_is_calibrated(c) for c in project.cameras):
            raise CalibrationError("project has no calibrated cameras")
        report = run_verification(project)
    except (CalibrationError, IncompleteCalibration, OSError) as e:
        sys.exit(_fail(e))
    click.echo(json.dumps(report, indent=2, sort_keys=True))
    if not report["pass"]:
        sys.exit(1)


@main.command()
@click.option("--project", "project_path", required=True, type=click.Path())
@click.option(
    "--format",
    "fmt",
    type=click.Choice(["matrix", "document"]),
    default="matrix",
    show_default=True,
)
def export(project_path: str, fmt: str):
    """Emit per-camera calibration as named parameters plus a 3x4 matrix."""
    try:
        project = _load(project_path)
        calibrated = [c for c in project.cameras if camera_is_calibrated(c)]
        if not calibrated:
            raise CalibrationError("project has no calibrated cameras")
        if fmt == "document":
            from .store import project_to_document

            doc = project_to_document(project)
            doc["cameras"] = [c for c in doc["cameras"] if c["placement"] is not None]
            click.echo(json.dumps(doc, indent=2, sort_keys=True))
            return
        out = {"cameras": []}
        for record in calibrated:
            model = derive_model(record)
            pose = model.pose
            out["cameras"].append(
                {
                    "id": record.id,
                    "parameters": {
                        "x0": float(_f9(pose.x0)),
                        "y0": float(_f9(pose.y0)),
                        "z0": float(_f9(pose.z0)),
                        "yaw": float(_f9(pose.yaw)),
                        "pitch": float(_f9(pose.pitch)),
                        "roll": float(_f9(pose.roll)),
                        "focal": float(_f9(model.intrinsics.focal)),
                    },
                    "matrix": [[float(_f9(v)) for v in row] for row in projection_matrix(model)],
                }
            )
    except (CalibrationError, IncompleteCalibration, OSError) as e:
        sys.exit(_fail(e))
    click.echo(json.dumps(out, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
