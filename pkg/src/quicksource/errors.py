"""Shared exception types."""

from __future__ import annotations


class QuicksourceError(Exception):
    """Base class for package errors."""


class VertexEncodingError(QuicksourceError, ValueError):
    """Vertex is not in canonical form for the graph kind."""


class BallSizeError(QuicksourceError, RuntimeError):
    """A neighborhood enumeration would exceed the configured memory cap."""


class ChannelError(QuicksourceError, ValueError):
    """Channel parameters violate the model's distribution requirements."""


class PlanError(QuicksourceError, ValueError):
    """Threshold plan cannot be constructed from the given parameters."""


class HorizonExhaustedError(QuicksourceError, RuntimeError):
    """A sequential run hit its horizon before the stopping rule fired.

    Carries whatever per-step diagnostics the run accumulated so the caller
    can report a partial result instead of losing the trial.
    """

    def __init__(self, message: str, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics
