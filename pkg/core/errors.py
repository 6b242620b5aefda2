#!/usr/bin/env python3
"""
Exception hierarchy for LiftGuard.
Every error raised on purpose by the toolkit derives from LiftGuardError so the
CLI can turn it into a clean message and a nonzero exit code.
"""


class LiftGuardError(Exception):
    """Base class for all LiftGuard errors."""


class ModelFormatError(LiftGuardError, ValueError):
    """Malformed or unknown content in a model, schedule or plan document."""


class DimensionError(LiftGuardError, ValueError):
    """Matrix shapes do not agree."""


class ScheduleError(LiftGuardError, ValueError):
    """Invalid frame period or sample offsets."""


class UnstablePlantError(LiftGuardError):
    """Spectral radius is at or above one where stability is required."""


class ModeError(LiftGuardError, KeyError):
    """Unknown attack mode id."""

    def __str__(self):
        return str(self.args[0]) if self.args else "unknown attack mode"


class InvarianceError(LiftGuardError):
    """A friend or restricted map fails its defining identity."""


class NotOutputNullingError(InvarianceError):
    """The subspace handed to compute_friend is not output-nulling."""


class ThresholdError(LiftGuardError):
    """Detection thresholds cannot be computed."""


class SynthesisError(LiftGuardError):
    """An attack plan cannot be built from the given witness."""


class WindowError(LiftGuardError):
    """A trace is too short to form an identification window."""
