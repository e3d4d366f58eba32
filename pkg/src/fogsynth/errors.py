"""Exception hierarchy shared by every module."""

from __future__ import annotations

from typing import Optional


class FogError(Exception):
    """Base class. ``frame_id`` is filled in by the pipeline when known."""

    def __init__(self, message: str, frame_id: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.frame_id = frame_id

    def __str__(self) -> str:
        if self.frame_id is not None:
            return f"[frame {self.frame_id}] {self.message}"
        return self.message


class ParameterError(FogError, ValueError):
    """A numeric parameter is outside its domain (negative beta, zero MOR...)."""


class DataError(FogError, ValueError):
    """Pixel data violates a precondition (NaN distance, out-of-range color, holes)."""


class ShapeError(FogError, ValueError):
    """Raster dimensions disagree."""


class FormatError(FogError, ValueError):
    """A file or byte buffer could not be parsed."""


class ConfigError(FogError, ValueError):
    """Malformed manifest, predicate or run configuration."""


class InputError(FogError):
    """An input file is missing or unreadable."""
