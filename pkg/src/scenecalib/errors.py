"""Exception hierarchy shared by all calibration stages.

Every error carries a stable ``code`` (the class name) so the HTTP service
and the CLI can emit machine-readable reason codes without string parsing.
"""

from __future__ import annotations


class CalibrationError(Exception):
    """Base class for all errors raised by this package."""

    #: extra structured payload for API error envelopes
    details: dict

    def __init__(self, message: str = "", **details):
        super().__init__(message)
        self.details = details

    @property
    def code(self) -> str:
        return type(self).__name__


# --- camera model -----------------------------------------------------------

class BehindCamera(CalibrationError):
    """World point at or behind the projection center; no pixel exists."""


class NoIntersection(CalibrationError):
    """Pixel ray is parallel to the target plane or meets it behind the camera."""


# --- vanishing geometry ------------------------------------------------------

class DegenerateLines(CalibrationError):
    """Too few distinct lines to intersect (all identical or fewer than two)."""


class AmbiguousRoll(CalibrationError):
    """Vertical vanishing point coincides with the principal point."""


class CoincidentPoint(CalibrationError):
    """Requested line through a point equal to the finite vanishing point."""


# --- distortion --------------------------------------------------------------

class InsufficientData(CalibrationError):
    """Not enough polyline points to constrain the distortion model."""


# --- stage 1 -----------------------------------------------------------------

class ProjectionFailure(CalibrationError):
    """Annotation points have no floor intersection under the tried parameters."""


class NonConvergence(CalibrationError):
    """Optimizer exhausted its budget without reaching the required tolerance."""


class InfeasibleGeometry(CalibrationError):
    """Every optimizer start failed to project the annotations to the floor."""


class HorizonViolation(CalibrationError):
    """Field-of-view vertices drawn past the horizon line.

    ``details["vertices"]`` lists the offending vertex indices.
    """


# --- stage 2 -----------------------------------------------------------------

class InconsistentPartial(CalibrationError):
    """Pose disagrees with the stage-1 result it claims to extend."""


# --- project store / documents -------------------------------------------------

class ValidationFailure(CalibrationError):
    """Structural or invariant violation; ``details["paths"]`` names the fields."""


class ParseFailure(CalibrationError):
    """Document is not readable as the expected text format."""


class SchemaFailure(CalibrationError):
    """Document declares an unknown schema version."""


class StaleVersion(CalibrationError):
    """Optimistic-concurrency token does not match the stored project."""


class UnknownId(CalibrationError):
    """No project or camera with the requested id."""


class IoFailure(CalibrationError):
    """Filesystem read or write failed."""
