"""Homogeneous fog optics.

Transmittance decays exponentially with camera-to-scene distance, and the
foggy image is the per-pixel convex blend of the clear image with a constant
atmospheric light::

    t = exp(-beta * distance)
    foggy = t * clear + (1 - t) * airlight

Visibility (meteorological optical range, MOR) is the distance at which
contrast falls to 5%, which gives ``MOR = 2.996 / beta``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from .errors import DataError, ParameterError, ShapeError
from .raster_io import ColorRaster

# -ln(0.05), rounded the way meteorological tables quote it
MOR_CONTRAST = 2.996
# MOR of 1 km is the meteorological upper limit for "fog"
FOG_VISIBILITY_LIMIT_M = 1000.0
FOG_BETA_MIN = 0.002996  # MOR_CONTRAST / FOG_VISIBILITY_LIMIT_M

# Canonical densities used for the reference foggy dataset, and their
# rounded visibilities in meters.
CANONICAL_BETAS = (0.005, 0.01, 0.02, 0.03, 0.06)
CANONICAL_VISIBILITIES_M = (600.0, 300.0, 150.0, 100.0, 50.0)


class ColorTriple(NamedTuple):
    r: float
    g: float
    b: float


class BlendSpace(str, enum.Enum):
    GAMMA = "gamma"
    LINEAR = "linear"


class FogClass(str, enum.Enum):
    FOG = "fog"
    HAZE = "haze"
    CLEAR = "clear"


def check_color(color: Sequence[float], what: str = "color") -> ColorTriple:
    if len(color) != 3:
        raise ParameterError(f"{what} must have 3 channels, got {len(color)}")
    triple = ColorTriple(*(float(c) for c in color))
    for c in triple:
        if not (0.0 <= c <= 1.0):
            raise ParameterError(f"{what} channels must lie in [0, 1], got {tuple(triple)}")
    return triple


@dataclass(frozen=True)
class FogParams:
    """Fog density plus how to pick the atmospheric light.

    ``airlight=None`` means estimate it from the clear image; a color triple
    fixes it.
    """

    beta: float
    airlight: Optional[ColorTriple] = None
    blend_space: BlendSpace = BlendSpace.GAMMA

    def __post_init__(self):
        check_beta(self.beta)
        if self.airlight is not None:
            object.__setattr__(self, "airlight", check_color(self.airlight, "fixed airlight"))
        object.__setattr__(self, "blend_space", BlendSpace(self.blend_space))


def check_beta(beta: float) -> float:
    beta = float(beta)
    if not beta >= 0.0 or math.isinf(beta):
        raise ParameterError(f"attenuation coefficient must be finite and >= 0, got {beta}")
    return beta


def _distance_values(distance) -> np.ndarray:
    values = getattr(distance, "values", distance)
    return np.asarray(values, dtype=np.float64)


def transmittance(distance, beta: float) -> np.ndarray:
    """Per-pixel ``exp(-beta * distance)``.

    ``distance`` is a :class:`~fogsynth.geometry.DistanceMap` or any array of
    non-negative finite distances in meters.
    """
    beta = check_beta(beta)
    ell = _distance_values(distance)
    for mask, what in ((~np.isfinite(ell), "non-finite"), (ell < 0, "negative")):
        if mask.any():
            pixel = tuple(int(i) for i in np.argwhere(mask)[0])
            raise DataError(f"{what} distance at pixel {pixel} (row, col)")
    if beta == 0.0:
        return np.ones_like(ell)
    return np.exp(-beta * ell)


def apply_fog(
    clear: ColorRaster,
    t: np.ndarray,
    airlight: Sequence[float],
    blend_space: Union[BlendSpace, str] = BlendSpace.GAMMA,
) -> ColorRaster:
    """Composite fog onto ``clear``; the result keeps the source bit depth."""
    t = np.asarray(t, dtype=np.float64)
    if t.shape != clear.shape:
        raise ShapeError(f"transmittance {t.shape} does not match image {clear.shape}")
    airlight = check_color(airlight, "airlight")
    blend_space = BlendSpace(blend_space)

    if blend_space is BlendSpace.LINEAR:
        radiance = srgb_decode(clear.data)
        light = srgb_decode(np.asarray(airlight, dtype=np.float64))
    else:
        radiance = clear.data
        light = np.asarray(airlight, dtype=np.float64)

    tt = t[:, :, None]
    foggy = tt * radiance + (1.0 - tt) * light

    if blend_space is BlendSpace.LINEAR:
        foggy = srgb_encode(np.clip(foggy, 0.0, 1.0))
    return ColorRaster(np.clip(foggy, 0.0, 1.0), clear.bit_depth)


def mor_from_beta(beta: float) -> float:
    """Visibility in meters for attenuation ``beta`` (1/m)."""
    beta = float(beta)
    if not beta > 0.0 or math.isinf(beta):
        raise ParameterError(f"beta must be > 0 to define a visibility, got {beta}")
    return MOR_CONTRAST / beta


def beta_from_mor(mor: float) -> float:
    mor = float(mor)
    if not mor > 0.0 or math.isinf(mor):
        raise ParameterError(f"visibility must be > 0 meters, got {mor}")
    return MOR_CONTRAST / mor


def validate_fog_beta(beta: float) -> FogClass:
    """Classify a density; never rejects a valid ``beta``."""
    beta = check_beta(beta)
    if beta == 0.0:
        return FogClass.CLEAR
    if beta < FOG_BETA_MIN:
        return FogClass.HAZE
    return FogClass.FOG


SRGB_ENCODED_KNEE = 0.04045
# 0.0031308 in the published curve; deriving it keeps decode/encode continuous at the seam
SRGB_LINEAR_KNEE = SRGB_ENCODED_KNEE / 12.92


def _check_unit_range(x: np.ndarray, what: str) -> None:
    if x.size and not (np.all(x >= 0.0) and np.all(x <= 1.0)):
        raise DataError(f"{what} input must lie in [0, 1]")


def srgb_decode(x) -> np.ndarray:
    """Gamma-encoded sRGB -> linear light (IEC 61966-2-1 piecewise curve)."""
    x = np.asarray(x, dtype=np.float64)
    _check_unit_range(x, "sRGB decode")
    return np.where(x <= SRGB_ENCODED_KNEE, x / 12.92, ((x + 0.055) / 1.055) ** 2.4)


def srgb_encode(x) -> np.ndarray:
    """Linear light -> gamma-encoded sRGB."""
    x = np.asarray(x, dtype=np.float64)
    _check_unit_range(x, "sRGB encode")
    return np.where(x <= SRGB_LINEAR_KNEE, x * 12.92, 1.055 * np.power(x, 1.0 / 2.4) - 0.055)
