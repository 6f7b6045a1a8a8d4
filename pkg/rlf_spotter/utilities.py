"""Utility classes for the RLF Spotter package."""
from __future__ import annotations

import math


class SpotterError(RuntimeError):
    """Base class for every error raised by the spotting pipeline."""


class InvalidParameterError(SpotterError, ValueError):
    """A tunable is outside the range its operation accepts."""


class InvalidInputError(SpotterError, ValueError):
    """An input value (image, box, record) is structurally invalid."""


class ConfigError(SpotterError):
    """The run configuration failed validation."""

    key: str | None

    def __init__(self, message: str, key: str | None = None) -> None:
        """Initialize a new instance of the ConfigError class."""
        super().__init__(message)
        self.key = key


class ImageReadError(SpotterError):
    """An image file could not be read."""


class ImageFormatError(SpotterError):
    """An image file is not in a supported raster format."""


class NoTextError(SpotterError):
    """An image holds no ink from which a text scale can be estimated."""


class EmptyQueryError(SpotterError):
    """A query exemplar produced no keypoints."""


class EvaluationError(SpotterError):
    """Retrieval evaluation could not produce a result."""


class CacheError(SpotterError):
    """A cached index file is corrupt or was written by another version."""


def require_positive(value: float, name: str) -> float:
    """Validate that a parameter is finite and strictly positive."""
    if value is None or not math.isfinite(value) or value <= 0:
        raise InvalidParameterError(f"{name} must be > 0, got {value}")

    return float(value)


def require_range(value: float, name: str, low: float, high: float) -> float:
    """Validate that a parameter lies within the closed interval [low, high]."""
    if value is None or not math.isfinite(value) or value < low or value > high:
        raise InvalidParameterError(f"{name} must be within [{low}, {high}], got {value}")

    return float(value)


def round_half_up(value: float) -> int:
    """Round to the nearest integer with halves going up, independent of banker's rounding."""
    return int(math.floor(value + 0.5))
