"""Exceptions raised by the fitting and calibration routines."""


class CalibrationError(Exception):
    """Base class for all errors raised by carm_pivot."""


class DegenerateInput(CalibrationError, ValueError):
    """Input points do not determine the requested model (too few, collinear, coplanar...)."""


class AmbiguousOrientation(CalibrationError):
    """A sign or direction cannot be decided from the data."""


class NoConsensus(CalibrationError):
    """RANSAC could not find a model supported by enough inliers."""


class InsufficientData(CalibrationError):
    """The observation bundle lacks trajectory sets the pipeline needs."""


class InconsistentNormals(CalibrationError):
    """Per-set plane normals disagree, which usually means mislabeled sets."""


class DegeneratePhase(CalibrationError, ValueError):
    """The phase-shift form is undefined (both numerator and denominator vanish)."""


class NoConvergence(CalibrationError):
    """Iterative solver hit its iteration cap.

    The best iterate found is available as ``best``.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
