"""PNG reading/writing for color and label rasters, plus annotation copying.

Color rasters are held as float64 arrays normalized to [0, 1] together with
the bit depth they came from, so a write at the same depth reproduces the
source integers exactly.
"""

from __future__ import annotations

import os
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Tuple, Union

import cv2
import numpy as np

from .errors import FormatError, InputError, ShapeError

PathLike = Union[str, os.PathLike]

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
SUPPORTED_BIT_DEPTHS = (8, 16)


def max_code(bit_depth: int) -> int:
    if bit_depth not in SUPPORTED_BIT_DEPTHS:
        raise FormatError(f"unsupported bit depth {bit_depth}; expected 8 or 16")
    return (1 << bit_depth) - 1


@dataclass(frozen=True)
class ColorRaster:
    """RGB image, ``data`` has shape (height, width, 3) with values in [0, 1]."""

    data: np.ndarray
    bit_depth: int = 8

    def __post_init__(self):
        data = self.data
        if data.ndim != 3 or data.shape[2] != 3:
            raise ShapeError(f"color raster must be HxWx3, got shape {data.shape}")
        if data.shape[0] * data.shape[1] == 0:
            raise ShapeError("color raster must have at least one pixel")
        max_code(self.bit_depth)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape[:2]

    @classmethod
    def from_codes(cls, codes: np.ndarray, bit_depth: int) -> "ColorRaster":
        return cls(np.asarray(codes, dtype=np.float64) / max_code(bit_depth), bit_depth)

    def to_codes(self, bit_depth: Optional[int] = None) -> np.ndarray:
        """Quantize to integers, round-half-to-even, clamped to the code range."""
        depth = self.bit_depth if bit_depth is None else bit_depth
        top = max_code(depth)
        codes = np.rint(np.clip(self.data, 0.0, 1.0) * top)
        return codes.astype(np.uint8 if depth == 8 else np.uint16)


@dataclass(frozen=True)
class LabelRaster:
    """Per-pixel integer class ids, shape (height, width)."""

    data: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape[:2]

    def check_matches(self, image: ColorRaster) -> None:
        if self.shape != image.shape:
            raise ShapeError(f"label raster {self.shape} does not match image {image.shape}")


def _check_png(blob: bytes, what: str) -> None:
    if not blob.startswith(PNG_SIGNATURE):
        raise FormatError(f"{what}: not a PNG file")


def decode_png(blob: bytes, what: str = "buffer") -> np.ndarray:
    """Decode PNG bytes to an integer array (HxW or HxWxC, RGB order)."""
    _check_png(blob, what)
    buf = np.frombuffer(blob, dtype=np.uint8)
    arr = cv2.imdecode(buf, cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise FormatError(f"{what}: corrupt or truncated PNG")
    if arr.ndim == 3:
        if arr.shape[2] == 3:
            arr = arr[:, :, ::-1]
        elif arr.shape[2] == 4:
            arr = arr[:, :, [2, 1, 0, 3]]
    return np.ascontiguousarray(arr)


def encode_png(codes: np.ndarray) -> bytes:
    """Encode an integer array (HxW or HxWx3 RGB) as PNG bytes."""
    if codes.dtype not in (np.uint8, np.uint16):
        raise FormatError(f"PNG encoding needs uint8 or uint16, got {codes.dtype}")
    if codes.ndim == 3:
        codes = codes[:, :, ::-1]
    ok, buf = cv2.imencode(".png", np.ascontiguousarray(codes))
    if not ok:
        raise FormatError("PNG encoding failed")
    return buf.tobytes()


def read_bytes(path: PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except FileNotFoundError:
        raise InputError(f"missing input file: {path}") from None
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None


def image_from_bytes(blob: bytes, what: str = "buffer") -> ColorRaster:
    arr = decode_png(blob, what)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    elif arr.shape[2] != 3:
        raise FormatError(f"{what}: expected an RGB PNG, got {arr.shape[2]} channels")
    depth = 16 if arr.dtype == np.uint16 else 8
    return ColorRaster.from_codes(arr, depth)


def read_image(path: PathLike) -> ColorRaster:
    return image_from_bytes(read_bytes(path), str(path))


def atomic_write_bytes(path: PathLike, blob: bytes) -> None:
    """Write through a sibling temp file and rename, so readers never see partial files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    try:
        tmp.write_bytes(blob)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def write_image(raster: ColorRaster, path: PathLike, bit_depth: Optional[int] = None) -> Path:
    atomic_write_bytes(path, encode_png(raster.to_codes(bit_depth)))
    return Path(path)


def read_label(path: PathLike) -> LabelRaster:
    arr = decode_png(read_bytes(path), str(path))
    if arr.ndim != 2:
        raise FormatError(f"{path}: label PNG must be single-channel")
    return LabelRaster(arr.astype(np.int64))


def write_label(label: LabelRaster, path: PathLike, bit_depth: int = 8) -> Path:
    dtype = np.uint8 if bit_depth == 8 else np.uint16
    atomic_write_bytes(path, encode_png(label.data.astype(dtype)))
    return Path(path)


def beta_suffix_rule(beta_label: str) -> Callable[[Path], str]:
    """Naming rule ``<stem>_beta_<label><suffix>``, e.g. 0001.png -> 0001_beta_0.02.png."""

    def rule(src: Path) -> str:
        return f"{src.stem}_beta_{beta_label}{src.suffix}"

    return rule


@dataclass
class CopyError:
    source: str
    message: str


def copy_annotations(
    src_paths: Iterable[PathLike],
    dst_dir: PathLike,
    naming_rule: Callable[[Path], str] = lambda p: p.name,
) -> Tuple[List[Path], List[CopyError]]:
    """Copy annotation files byte-for-byte.

    A missing or unreadable source is recorded in the returned error list and
    does not stop the remaining copies.
    """
    dst_dir = Path(dst_dir)
    written: List[Path] = []
    errors: List[CopyError] = []
    for src in map(Path, src_paths):
        dst = dst_dir / naming_rule(src)
        tmp = dst.with_name(f".{dst.name}.{os.getpid()}.tmp")
        try:
            dst.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(src, tmp)
            os.replace(tmp, dst)
        except OSError as exc:
            if tmp.exists():
                tmp.unlink()
            errors.append(CopyError(str(src), f"{type(exc).__name__}: {exc.strerror or exc}"))
            continue
        written.append(dst)
    return written, errors


def png_size(path: PathLike) -> Tuple[int, int]:
    """(width, height) from the PNG header without decoding pixels."""
    with open(path, "rb") as fh:
        head = fh.read(24)
    if len(head) < 24 or not head.startswith(PNG_SIGNATURE) or head[12:16] != b"IHDR":
        raise FormatError(f"{path}: not a PNG file")
    return int.from_bytes(head[16:20], "big"), int.from_bytes(head[20:24], "big")
