"""Exception types shared across the pipeline."""

from __future__ import annotations


class LegAssistError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(LegAssistError, ValueError):
    pass


class InvalidDepthError(InvalidArgumentError):
    pass


class FrameMismatchError(LegAssistError, ValueError):
    pass


class ShapeError(LegAssistError, ValueError):
    pass


class FormatError(LegAssistError, ValueError):
    """Malformed file content. ``location`` is a byte offset or a line number."""

    def __init__(self, message: str, location: int | None = None, kind: str = "offset"):
        self.location = location
        self.kind = kind
        if location is not None:
            message = f"{message} (at {kind} {location})"
        super().__init__(message)


class TrainingDivergedError(LegAssistError, RuntimeError):
    def __init__(self, step: int, loss: float):
        self.step = step
        self.loss = loss
        super().__init__(f"training diverged at step {step}: loss={loss}")


class InsufficientDataError(LegAssistError, ValueError):
    pass
