"""Depth decoding and planar-depth to radial-distance conversion.

Driving datasets store planar depth, the distance from the image plane to the
scene point along the optical axis. Fog attenuation depends on the length of
the ray from the camera center instead. For a pinhole camera the two differ
by the length of the unit-depth ray through the pixel center::

    distance = depth * sqrt(((u + 0.5 - cx) / fx)**2 + ((v + 0.5 - cy) / fy)**2 + 1)
"""

from __future__ import annotations

import enum
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError, DataError, FormatError, ParameterError, ShapeError
from .raster_io import decode_png, encode_png

log = logging.getLogger(__name__)

FDEPTH_MAGIC = b"FDEPTH01"
FDEPTH_HEADER = struct.Struct("<8sII")

DEFAULT_FAR_DISTANCE_M = 1000.0


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels. ``width``/``height`` are optional and only
    used to check that depth rasters have the expected size."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: Optional[int] = None
    height: Optional[int] = None

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ParameterError(f"intrinsic {name} must be finite, got {value}")
            object.__setattr__(self, name, value)
        if self.fx <= 0 or self.fy <= 0:
            raise ParameterError(f"focal lengths must be > 0, got fx={self.fx}, fy={self.fy}")

    @classmethod
    def centered(cls, fx: float, width: int, height: int, fy: Optional[float] = None) -> "CameraIntrinsics":
        """Principal point at the geometric image center."""
        return cls(fx, fx if fy is None else fy, width / 2.0, height / 2.0, width, height)

    def check_image_size(self, height: int, width: int) -> None:
        if self.width is not None and self.width != width or self.height is not None and self.height != height:
            raise ShapeError(
                f"depth raster is {width}x{height} but intrinsics expect {self.width}x{self.height}"
            )
        # more than one full image extent outside the frame
        if not (-width <= self.cx <= 2 * width and -height <= self.cy <= 2 * height):
            log.warning(
                "principal point (%.1f, %.1f) lies far outside the %dx%d image", self.cx, self.cy, width, height
            )

    def to_dict(self) -> Dict[str, Any]:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "CameraIntrinsics":
        try:
            fx = d["fx"]
            return cls(fx, d.get("fy", fx), d["cx"], d["cy"], d.get("width"), d.get("height"))
        except KeyError as exc:
            raise ConfigError(f"intrinsics missing field {exc}") from None


class DepthCodec(str, enum.Enum):
    FLOAT32_RASTER = "float32_raster"
    SCALED_U16_PNG = "scaled_u16_png"
    DISPARITY_U16_PNG = "disparity_u16_png"


@dataclass(frozen=True)
class DepthCodecSpec:
    codec: DepthCodec = DepthCodec.FLOAT32_RASTER
    # ScaledU16Png: meters per raw unit
    scale: Optional[float] = None
    # DisparityU16Png: depth = baseline * fx / ((raw - offset) / divisor)
    baseline: Optional[float] = None
    fx: Optional[float] = None
    offset: float = 1.0
    divisor: float = 256.0

    def __post_init__(self):
        try:
            object.__setattr__(self, "codec", DepthCodec(self.codec))
        except ValueError:
            raise ConfigError(f"unknown depth codec {self.codec!r}") from None
        if self.codec is DepthCodec.SCALED_U16_PNG:
            if self.scale is None or not self.scale > 0:
                raise ParameterError(f"scaled_u16_png needs scale > 0, got {self.scale}")
        elif self.codec is DepthCodec.DISPARITY_U16_PNG:
            if self.baseline is None or not self.baseline > 0:
                raise ParameterError(f"disparity codec needs baseline > 0, got {self.baseline}")
            if self.fx is None or not self.fx > 0:
                raise ParameterError(f"disparity codec needs fx > 0, got {self.fx}")
            if not self.divisor > 0:
                raise ParameterError(f"disparity divisor must be > 0, got {self.divisor}")

    def to_dict(self) -> Dict[str, Any]:
        d: Dict[str, Any] = {"codec": self.codec.value}
        if self.codec is DepthCodec.SCALED_U16_PNG:
            d["scale"] = self.scale
        elif self.codec is DepthCodec.DISPARITY_U16_PNG:
            d.update(baseline=self.baseline, fx=self.fx, offset=self.offset, divisor=self.divisor)
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "DepthCodecSpec":
        known = {"codec", "scale", "baseline", "fx", "offset", "divisor"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown depth codec fields: {sorted(extra)}")
        return cls(**d)


@dataclass(frozen=True)
class DepthMap:
    """Planar depth in meters. Invalid pixels hold NaN and ``valid`` is False there."""

    values: np.ndarray
    valid: np.ndarray = field(default=None)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.size == 0:
            raise ShapeError(f"depth map must be a non-empty 2-D raster, got shape {values.shape}")
        valid = np.isfinite(values) & (values > 0)
        if self.valid is not None:
            valid &= np.asarray(self.valid, dtype=bool)
        values = np.where(valid, values, np.nan)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    @property
    def hole_count(self) -> int:
        return int(self.valid.size - np.count_nonzero(self.valid))


@dataclass(frozen=True)
class DistanceMap:
    """Radial camera-center-to-scene distance in meters (NaN where undefined)."""

    values: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape


def encode_float32_raster(values: np.ndarray) -> bytes:
    values = np.asarray(values, dtype="<f4")
    if values.ndim != 2:
        raise ShapeError(f"expected a 2-D raster, got shape {values.shape}")
    h, w = values.shape
    return FDEPTH_HEADER.pack(FDEPTH_MAGIC, w, h) + values.tobytes(order="C")


def encode_scaled_u16(depth_m: np.ndarray, scale: float) -> bytes:
    """Inverse of the ScaledU16Png codec; non-positive or non-finite depth becomes raw 0."""
    depth_m = np.asarray(depth_m, dtype=np.float64)
    ok = np.isfinite(depth_m) & (depth_m > 0)
    raw = np.where(ok, np.rint(np.where(ok, depth_m, 0.0) / scale), 0)
    if raw.max(initial=0) > 65535:
        raise DataError("depth exceeds the 16-bit range for this scale")
    return encode_png(raw.astype(np.uint16))


def _decode_float32_raster(raw: bytes) -> np.ndarray:
    if len(raw) < FDEPTH_HEADER.size:
        raise FormatError("float32 depth raster: truncated header")
    magic, w, h = FDEPTH_HEADER.unpack_from(raw)
    if magic != FDEPTH_MAGIC:
        raise FormatError(f"float32 depth raster: bad magic {magic!r}")
    if w == 0 or h == 0:
        raise FormatError(f"float32 depth raster: empty dimensions {w}x{h}")
    expected = FDEPTH_HEADER.size + 4 * w * h
    if len(raw) != expected:
        raise FormatError(f"float32 depth raster: expected {expected} bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype="<f4", offset=FDEPTH_HEADER.size).reshape(h, w).astype(np.float64)


def _decode_u16_png(raw: bytes) -> np.ndarray:
    arr = decode_png(raw, "depth PNG")
    if arr.ndim != 2 or arr.dtype != np.uint16:
        raise FormatError(f"depth PNG must be single-channel 16-bit, got {arr.dtype} shape {arr.shape}")
    return arr


def decode_depth(raw: bytes, spec: DepthCodecSpec = DepthCodecSpec()) -> DepthMap:
    """Decode a depth file's bytes into planar depth in meters."""
    if spec.codec is DepthCodec.FLOAT32_RASTER:
        depth = DepthMap(_decode_float32_raster(raw))
    elif spec.codec is DepthCodec.SCALED_U16_PNG:
        codes = _decode_u16_png(raw)
        depth = DepthMap(codes * spec.scale, valid=codes > 0)
    else:
        codes = _decode_u16_png(raw).astype(np.float64)
        disparity = (codes - spec.offset) / spec.divisor
        ok = (codes > 0) & (disparity > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            depth = DepthMap(np.where(ok, spec.baseline * spec.fx / disparity, np.nan), valid=ok)
    if not depth.valid.any():
        raise DataError("depth raster contains no valid pixels")
    return depth


def ray_length_factors(K: CameraIntrinsics, height: int, width: int) -> np.ndarray:
    """Length of the pixel-center ray that has unit planar depth."""
    x = (np.arange(width) + 0.5 - K.cx) / K.fx
    y = (np.arange(height) + 0.5 - K.cy) / K.fy
    return np.sqrt(x[None, :] ** 2 + y[:, None] ** 2 + 1.0)


def planar_to_radial(depth: DepthMap, K: CameraIntrinsics) -> DistanceMap:
    K.check_image_size(*depth.shape)
    return DistanceMap(depth.values * ray_length_factors(K, *depth.shape))


class HoleFill(str, enum.Enum):
    REJECT = "reject"
    MAX_DISTANCE = "max_distance"
    NEAREST_VALID = "nearest_valid"


@dataclass(frozen=True)
class HolePolicy:
    kind: HoleFill = HoleFill.REJECT
    far_distance: float = DEFAULT_FAR_DISTANCE_M

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", HoleFill(self.kind))
        except ValueError:
            raise ConfigError(f"unknown hole policy {self.kind!r}") from None
        if not (self.far_distance > 0 and math.isfinite(self.far_distance)):
            raise ParameterError(f"far distance must be finite and > 0, got {self.far_distance}")


def _nearest_valid_indices(valid: np.ndarray) -> np.ndarray:
    """For every hole, the flat index of the nearest valid pixel.

    Ties in Euclidean pixel distance go to the lowest row-major index.
    Squared distances are integers, so the comparison is exact.
    """
    w = valid.shape[1]
    valid_flat = np.flatnonzero(valid)  # ascending = row-major order
    hole_flat = np.flatnonzero(~valid)
    valid_rc = np.column_stack(np.divmod(valid_flat, w))
    hole_rc = np.column_stack(np.divmod(hole_flat, w))
    tree = cKDTree(valid_rc)

    k = min(8, len(valid_flat))
    _, idx = tree.query(hole_rc, k=k)
    idx = idx.reshape(len(hole_flat), k)
    d2 = ((valid_rc[idx] - hole_rc[:, None, :]) ** 2).sum(axis=2)
    best_d2 = d2.min(axis=1)
    # among the k returned, pick the smallest row-major index at the minimal distance
    cand = np.where(d2 == best_d2[:, None], valid_flat[idx], np.iinfo(np.int64).max)
    chosen = cand.min(axis=1)

    # if all k neighbours tie, more tied pixels may exist beyond k
    saturated = np.flatnonzero((d2[:, -1] == best_d2) & (k < len(valid_flat)))
    for i in saturated:
        radius = math.sqrt(best_d2[i]) + 1e-6
        members = np.asarray(tree.query_ball_point(hole_rc[i], radius), dtype=np.int64)
        md2 = ((valid_rc[members] - hole_rc[i]) ** 2).sum(axis=1)
        chosen[i] = valid_flat[members[md2 == best_d2[i]]].min()
    return chosen


def fill_holes(depth: DepthMap, policy: HolePolicy = HolePolicy()) -> DepthMap:
    """Return a depth map without holes; valid pixels are never changed."""
    holes = depth.hole_count
    if holes == 0:
        return depth
    if policy.kind is HoleFill.REJECT:
        raise DataError(f"depth map has {holes} invalid pixel(s) and the hole policy is 'reject'")
    if policy.kind is HoleFill.MAX_DISTANCE:
        return DepthMap(np.where(depth.valid, depth.values, policy.far_distance))
    if holes == depth.valid.size:
        raise DataError("nearest-valid hole filling needs at least one valid pixel")
    filled = depth.values.copy().ravel()
    hole_flat = np.flatnonzero(~depth.valid)
    filled[hole_flat] = filled[_nearest_valid_indices(depth.valid)]
    return DepthMap(filled.reshape(depth.shape))
