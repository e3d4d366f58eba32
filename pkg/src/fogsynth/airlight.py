"""Atmospheric light estimation from a clear-weather image via the dark channel.

The brightest pixels of the dark channel are the ones least explained by
scene albedo, which in daylight outdoor images is usually sky or cloud. When
the sky is cloudless this picks saturated blue, which tints the rendered fog;
estimation does not try to correct that (filter such frames upstream).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import minimum_filter

from .errors import ConfigError, ParameterError, ShapeError
from .optics import ColorTriple
from .raster_io import ColorRaster


class Aggregation(str, enum.Enum):
    MEAN_OF_CANDIDATES = "mean"
    MAX_INTENSITY_PIXEL = "max_intensity"


@dataclass(frozen=True)
class AirlightConfig:
    patch_radius: int = 7
    brightest_fraction: float = 0.001
    aggregation: Aggregation = Aggregation.MAX_INTENSITY_PIXEL

    def __post_init__(self):
        if int(self.patch_radius) != self.patch_radius or self.patch_radius < 0:
            raise ParameterError(f"patch_radius must be a non-negative integer, got {self.patch_radius}")
        if not (0.0 < self.brightest_fraction <= 1.0):
            raise ParameterError(f"brightest_fraction must lie in (0, 1], got {self.brightest_fraction}")
        try:
            object.__setattr__(self, "aggregation", Aggregation(self.aggregation))
        except ValueError:
            raise ConfigError(f"unknown airlight aggregation {self.aggregation!r}") from None
        object.__setattr__(self, "patch_radius", int(self.patch_radius))

    def to_dict(self) -> dict:
        return {
            "patch_radius": self.patch_radius,
            "brightest_fraction": self.brightest_fraction,
            "aggregation": self.aggregation.value,
        }


def _pixels(image) -> np.ndarray:
    data = image.data if isinstance(image, ColorRaster) else np.asarray(image, dtype=np.float64)
    if data.ndim != 3 or data.shape[2] != 3 or data.shape[0] * data.shape[1] == 0:
        raise ShapeError(f"expected a non-empty HxWx3 image, got shape {data.shape}")
    return data


def dark_channel(image, patch_radius: int = 7) -> np.ndarray:
    """Min over channels, then over a (2r+1)^2 window truncated at the borders."""
    if patch_radius < 0:
        raise ParameterError(f"patch_radius must be >= 0, got {patch_radius}")
    per_pixel = _pixels(image).min(axis=2)
    if patch_radius == 0:
        return per_pixel
    # edge replication only repeats values already inside the truncated window
    return minimum_filter(per_pixel, size=2 * patch_radius + 1, mode="nearest")


def candidate_indices(dark: np.ndarray, count: int) -> np.ndarray:
    """Row-major flat indices of the ``count`` highest dark-channel pixels.

    Among equal values the earlier pixel in row-major order wins. The result
    is sorted ascending (row-major).
    """
    flat = dark.ravel()
    count = min(count, flat.size)
    threshold = np.partition(flat, flat.size - count)[flat.size - count]
    above = np.flatnonzero(flat > threshold)
    at = np.flatnonzero(flat == threshold)[: count - len(above)]
    return np.sort(np.concatenate([above, at]))


def estimate_airlight(image, cfg: AirlightConfig = AirlightConfig()) -> ColorTriple:
    data = _pixels(image)
    dark = dark_channel(data, cfg.patch_radius)
    count = max(1, math.ceil(cfg.brightest_fraction * dark.size))
    idx = candidate_indices(dark, count)
    colors = data.reshape(-1, 3)[idx]
    if cfg.aggregation is Aggregation.MEAN_OF_CANDIDATES:
        # clip guards against the mean drifting an ulp past the candidates' range
        light = np.clip(colors.mean(axis=0), colors.min(axis=0), colors.max(axis=0))
    else:
        # np.argmax returns the first maximum, i.e. the row-major tie-break
        light = colors[np.argmax(colors.sum(axis=1))]
    return ColorTriple(*(float(c) for c in light))
