"""Per-frame fog synthesis and batch dataset generation.

A batch reads a JSON Lines manifest of clear frames, renders one foggy
variant per frame and density, copies the frame's annotations unchanged next
to every variant and writes a JSON run report.

Output layout under ``out_dir``::

    <frame_id>_beta_<beta>.png
    annotations/<source dir name>/<stem>_beta_<beta><suffix>
    report.json
"""

from __future__ import annotations

import json
import logging
import math
import operator
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from concurrent.futures.process import BrokenProcessPool
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .airlight import AirlightConfig, estimate_airlight
from .errors import ConfigError, FogError, ShapeError
from .geometry import (
    CameraIntrinsics,
    DepthCodecSpec,
    HolePolicy,
    decode_depth,
    fill_holes,
    planar_to_radial,
)
from .optics import BlendSpace, ColorTriple, FogParams, apply_fog, check_beta, transmittance
from .raster_io import (
    ColorRaster,
    PathLike,
    atomic_write_bytes,
    beta_suffix_rule,
    copy_annotations,
    encode_png,
    image_from_bytes,
    read_bytes,
)

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
REPORT_NAME = "report.json"
ANNOTATION_DIR = "annotations"

STATUS_OK = "ok"
STATUS_FAILED = "failed"


# ---------------------------------------------------------------------------
# manifest


@dataclass
class FrameRecord:
    frame_id: str
    image: Path
    depth: Path
    depth_codec: Optional[DepthCodecSpec] = None
    annotations: List[Path] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)
    intrinsics: Optional[CameraIntrinsics] = None

    @classmethod
    def from_json(cls, obj: Dict[str, Any], root: Path) -> "FrameRecord":
        if not isinstance(obj, dict):
            raise ConfigError("manifest entry must be a JSON object")
        known = {"frame_id", "image", "depth", "depth_codec", "annotations", "metadata", "intrinsics"}
        extra = set(obj) - known
        if extra:
            raise ConfigError(f"unknown manifest fields: {sorted(extra)}")
        try:
            frame_id = str(obj["frame_id"])
            image, depth = obj["image"], obj["depth"]
        except KeyError as exc:
            raise ConfigError(f"manifest entry missing field {exc}") from None
        if not frame_id or "/" in frame_id or "\\" in frame_id:
            raise ConfigError(f"invalid frame id {frame_id!r}")
        metadata = obj.get("metadata", {})
        if not isinstance(metadata, dict):
            raise ConfigError(f"frame {frame_id}: metadata must be an object")
        codec = obj.get("depth_codec")
        intrinsics = obj.get("intrinsics")
        return cls(
            frame_id=frame_id,
            image=root / image,
            depth=root / depth,
            depth_codec=DepthCodecSpec.from_dict(codec) if codec is not None else None,
            annotations=[root / a for a in obj.get("annotations", [])],
            metadata=dict(metadata),
            intrinsics=CameraIntrinsics.from_dict(intrinsics) if intrinsics is not None else None,
        )

    def to_json(self, base: Path) -> Dict[str, Any]:
        def rel(p: Path) -> str:
            try:
                return os.path.relpath(p, base)
            except ValueError:
                return str(p)

        obj: Dict[str, Any] = {"frame_id": self.frame_id, "image": rel(self.image), "depth": rel(self.depth)}
        if self.depth_codec is not None:
            obj["depth_codec"] = self.depth_codec.to_dict()
        if self.annotations:
            obj["annotations"] = [rel(a) for a in self.annotations]
        if self.metadata:
            obj["metadata"] = self.metadata
        if self.intrinsics is not None:
            obj["intrinsics"] = self.intrinsics.to_dict()
        return obj


@dataclass
class DatasetManifest:
    frames: List[FrameRecord]
    root: Path = Path(".")

    def __post_init__(self):
        seen = set()
        for rec in self.frames:
            if rec.frame_id in seen:
                raise ConfigError(f"duplicate frame id {rec.frame_id!r} in manifest")
            seen.add(rec.frame_id)

    def __len__(self) -> int:
        return len(self.frames)


def read_manifest(path: PathLike, root: Optional[PathLike] = None) -> DatasetManifest:
    """Load a JSON Lines manifest; relative paths resolve against ``root``
    (default: the manifest's directory)."""
    path = Path(path)
    root = Path(root) if root is not None else path.parent
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from None
    frames = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
        try:
            frames.append(FrameRecord.from_json(obj, root))
        except FogError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return DatasetManifest(frames, root)


def write_manifest(manifest: DatasetManifest, path: PathLike) -> Path:
    path = Path(path)
    base = path.parent.resolve()
    lines = [json.dumps(rec.to_json(base), sort_keys=True) for rec in manifest.frames]
    atomic_write_bytes(path, ("\n".join(lines) + "\n" if lines else "").encode("utf-8"))
    return path


# ---------------------------------------------------------------------------
# metadata filtering

_OPS = {
    "<": operator.lt,
    "<=": operator.le,
    "≤": operator.le,
    "=": operator.eq,
    "==": operator.eq,
    ">=": operator.ge,
    "≥": operator.ge,
    ">": operator.gt,
}
_PREDICATE_RE = re.compile(r"^\s*([A-Za-z_][\w.\-]*)\s*(<=|>=|==|≤|≥|<|>|=)\s*(\S+)\s*$")
_ALWAYS_TRUE = {"", "*", "true", "all"}


@dataclass(frozen=True)
class Predicate:
    key: str
    op: str
    value: float

    @classmethod
    def parse(cls, text: str) -> "Predicate":
        m = _PREDICATE_RE.match(text)
        if not m:
            raise ConfigError(f"malformed predicate {text!r}; expected e.g. 'sky_contrast <= 3'")
        key, op, raw = m.groups()
        try:
            value = float(raw)
        except ValueError:
            raise ConfigError(f"predicate {text!r}: {raw!r} is not a number") from None
        if math.isnan(value):
            raise ConfigError(f"predicate {text!r}: NaN threshold")
        return cls(key, op, value)

    def __call__(self, value: float) -> bool:
        return _OPS[self.op](value, self.value)

    def __str__(self) -> str:
        return f"{self.key} {self.op} {self.value:g}"


def parse_predicates(spec: Union[str, Sequence[str], None]) -> List[Predicate]:
    if spec is None:
        return []
    items = [spec] if isinstance(spec, str) else list(spec)
    return [Predicate.parse(s) for s in items if s.strip().lower() not in _ALWAYS_TRUE]


@dataclass
class FilterResult:
    manifest: DatasetManifest
    missing_key: int = 0
    non_numeric: int = 0
    rejected: int = 0

    @property
    def excluded(self) -> int:
        return self.missing_key + self.non_numeric + self.rejected


def _as_number(value: Any) -> Optional[float]:
    if isinstance(value, bool):
        return None
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return None
    return None


def filter_manifest(
    manifest: DatasetManifest, predicate_spec: Union[str, Sequence[str], None]
) -> FilterResult:
    """Keep frames whose numeric metadata satisfies every predicate, in order.

    Frames lacking a referenced key, or holding a non-numeric value there,
    are excluded and tallied separately.
    """
    predicates = parse_predicates(predicate_spec)
    result = FilterResult(DatasetManifest([], manifest.root))
    for rec in manifest.frames:
        verdict = "keep"
        for pred in predicates:
            if pred.key not in rec.metadata:
                verdict = "missing_key"
                break
            number = _as_number(rec.metadata[pred.key])
            if number is None or math.isnan(number):
                verdict = "non_numeric"
                break
            if not pred(number):
                verdict = "rejected"
                break
        if verdict == "keep":
            result.manifest.frames.append(rec)
        else:
            setattr(result, verdict, getattr(result, verdict) + 1)
    return result


def split_holdout(manifest: DatasetManifest, count: int) -> Tuple[DatasetManifest, DatasetManifest]:
    """Split off the last ``count`` frames (e.g. as a validation set)."""
    if count < 0:
        raise ConfigError(f"holdout count must be >= 0, got {count}")
    cut = max(0, len(manifest.frames) - count)
    return (
        DatasetManifest(manifest.frames[:cut], manifest.root),
        DatasetManifest(manifest.frames[cut:], manifest.root),
    )


# ---------------------------------------------------------------------------
# rendering


@dataclass(frozen=True)
class BetaLevel:
    """A density plus the exact text used for it in output names."""

    label: str
    value: float


def beta_levels(betas: Iterable[Union[str, float]]) -> List[BetaLevel]:
    """Strings keep their spelling; floats are labelled with ``repr``."""
    levels = []
    for b in betas:
        label = b.strip() if isinstance(b, str) else repr(float(b))
        try:
            value = float(label)
        except ValueError:
            raise ConfigError(f"beta {b!r} is not a number") from None
        levels.append(BetaLevel(label, check_beta(value)))
    labels = [lv.label for lv in levels]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"duplicate beta values in {labels}")
    if not levels:
        raise ConfigError("at least one beta value is required")
    return levels


def output_name(frame_id: str, beta_label: str) -> str:
    return f"{frame_id}_beta_{beta_label}.png"


@dataclass
class FrameStats:
    frame_id: str
    beta: float
    airlight: ColorTriple
    airlight_source: str
    mean_transmittance: float


def _load_frame(record: FrameRecord, K: CameraIntrinsics, hole_policy: HolePolicy, codec: DepthCodecSpec):
    clear = image_from_bytes(read_bytes(record.image), str(record.image))
    depth = decode_depth(read_bytes(record.depth), record.depth_codec or codec)
    if depth.shape != clear.shape:
        raise ShapeError(f"image is {clear.shape} but depth is {depth.shape} (rows, cols)")
    depth = fill_holes(depth, hole_policy)
    distance = planar_to_radial(depth, record.intrinsics or K)
    return clear, distance


def render_variants(
    record: FrameRecord,
    levels: Sequence[BetaLevel],
    params: FogParams,
    K: CameraIntrinsics,
    airlight_cfg: AirlightConfig = AirlightConfig(),
    hole_policy: HolePolicy = HolePolicy(),
    depth_codec: DepthCodecSpec = DepthCodecSpec(),
):
    """Render every density for one frame, sharing depth and airlight.

    Returns ``(airlight, source, [(level, foggy raster, mean t), ...])``.
    ``params.beta`` is ignored in favor of ``levels``.
    """
    try:
        clear, distance = _load_frame(record, K, hole_policy, depth_codec)
        if params.airlight is None:
            light, source = estimate_airlight(clear, airlight_cfg), "estimated"
        else:
            light, source = params.airlight, "fixed"
        variants = []
        for level in levels:
            t = transmittance(distance, level.value)
            variants.append((level, apply_fog(clear, t, light, params.blend_space), float(t.mean())))
    except FogError as exc:
        exc.frame_id = record.frame_id
        raise
    return light, source, variants


def process_frame(
    record: FrameRecord,
    params: FogParams,
    K: CameraIntrinsics,
    airlight_cfg: AirlightConfig = AirlightConfig(),
    hole_policy: HolePolicy = HolePolicy(),
    depth_codec: DepthCodecSpec = DepthCodecSpec(),
) -> Tuple[ColorRaster, FrameStats]:
    """Render one frame at ``params.beta``. Errors carry ``frame_id``."""
    level = BetaLevel(repr(params.beta), params.beta)
    light, source, [(_, foggy, mean_t)] = render_variants(
        record, [level], params, K, airlight_cfg, hole_policy, depth_codec
    )
    return foggy, FrameStats(record.frame_id, params.beta, light, source, mean_t)


# ---------------------------------------------------------------------------
# batch


@dataclass
class FrameResult:
    frame_id: str
    status: str
    airlight: Optional[List[float]] = None
    airlight_source: Optional[str] = None
    mean_transmittance: Dict[str, float] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    annotations: List[str] = field(default_factory=list)
    errors: List[str] = field(default_factory=list)
    wall_time_s: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "frame_id": self.frame_id,
            "status": self.status,
            "airlight": self.airlight,
            "airlight_source": self.airlight_source,
            "mean_transmittance": self.mean_transmittance,
            "outputs": self.outputs,
            "annotations": self.annotations,
            "errors": self.errors,
            "wall_time_s": self.wall_time_s,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "FrameResult":
        return cls(**d)


@dataclass
class RunReport:
    frames: List[FrameResult]
    betas: List[str]
    complete: bool = True
    excluded: int = 0
    total_time_s: float = 0.0
    config: Dict[str, Any] = field(default_factory=dict)

    def count(self, status: str) -> int:
        return sum(1 for f in self.frames if f.status == status)

    @property
    def outputs(self) -> int:
        return sum(len(f.outputs) for f in self.frames)

    @property
    def annotation_errors(self) -> int:
        return sum(len(f.errors) for f in self.frames if f.status == STATUS_OK)

    @property
    def ok(self) -> bool:
        return self.complete and self.count(STATUS_FAILED) == 0 and self.annotation_errors == 0

    def aggregate(self) -> Dict[str, Any]:
        return {
            "frames_attempted": len(self.frames),
            "frames_ok": self.count(STATUS_OK),
            "frames_failed": self.count(STATUS_FAILED),
            "betas": len(self.betas),
            "outputs": self.outputs,
            "annotation_copies": sum(len(f.annotations) for f in self.frames),
            "annotation_errors": self.annotation_errors,
            "excluded": self.excluded,
            "complete": self.complete,
            "total_time_s": self.total_time_s,
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "betas": self.betas,
            "aggregate": self.aggregate(),
            "config": self.config,
            "frames": [f.to_dict() for f in self.frames],
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "RunReport":
        agg = d.get("aggregate", {})
        return cls(
            frames=[FrameResult.from_dict(f) for f in d.get("frames", [])],
            betas=list(d.get("betas", [])),
            complete=bool(agg.get("complete", True)),
            excluded=int(agg.get("excluded", 0)),
            total_time_s=float(agg.get("total_time_s", 0.0)),
            config=d.get("config", {}),
        )

    def write(self, path: PathLike) -> Path:
        atomic_write_bytes(path, (json.dumps(self.to_dict(), indent=2) + "\n").encode("utf-8"))
        return Path(path)


@dataclass(frozen=True)
class _FrameJob:
    record: FrameRecord
    levels: Tuple[BetaLevel, ...]
    params: FogParams
    K: CameraIntrinsics
    airlight_cfg: AirlightConfig
    hole_policy: HolePolicy
    depth_codec: DepthCodecSpec
    out_dir: Path


def _annotation_dir(out_dir: Path, src: Path) -> Path:
    return out_dir / ANNOTATION_DIR / (src.parent.name or "_")


def _run_frame(job: _FrameJob) -> FrameResult:
    """Worker entry point: never raises, every failure lands in the result."""
    start = time.perf_counter()
    rec = job.record
    result = FrameResult(rec.frame_id, STATUS_FAILED)
    written: List[Path] = []
    try:
        light, source, variants = render_variants(
            rec, job.levels, job.params, job.K, job.airlight_cfg, job.hole_policy, job.depth_codec
        )
        # encode everything before touching the output directory
        blobs = [(lv, encode_png(foggy.to_codes()), mean_t) for lv, foggy, mean_t in variants]
        for lv, blob, mean_t in blobs:
            dst = job.out_dir / output_name(rec.frame_id, lv.label)
            atomic_write_bytes(dst, blob)
            written.append(dst)
            result.outputs.append(dst.name)
            result.mean_transmittance[lv.label] = mean_t
        result.airlight = [float(c) for c in light]
        result.airlight_source = source
    except Exception as exc:  # isolation: one bad frame must not stop the batch
        for path in written:
            path.unlink(missing_ok=True)
        result.outputs.clear()
        result.mean_transmittance.clear()
        msg = str(exc) if isinstance(exc, FogError) else f"{type(exc).__name__}: {exc}"
        result.errors.append(msg)
        result.wall_time_s = time.perf_counter() - start
        return result

    result.status = STATUS_OK
    for lv in job.levels:
        for src in rec.annotations:
            dst_dir = _annotation_dir(job.out_dir, src)
            copies, errors = copy_annotations([src], dst_dir, beta_suffix_rule(lv.label))
            result.annotations.extend(str(p.relative_to(job.out_dir)) for p in copies)
            result.errors.extend(f"annotation {e.source}: {e.message}" for e in errors)
    result.wall_time_s = time.perf_counter() - start
    return result


def default_config_echo(
    levels: Sequence[BetaLevel],
    params: FogParams,
    K: CameraIntrinsics,
    airlight_cfg: AirlightConfig,
    hole_policy: HolePolicy,
    depth_codec: DepthCodecSpec,
    workers: int,
) -> Dict[str, Any]:
    return {
        "betas": [lv.label for lv in levels],
        "airlight": "estimated" if params.airlight is None else list(params.airlight),
        "blend_space": params.blend_space.value,
        "intrinsics": K.to_dict(),
        "airlight_config": airlight_cfg.to_dict(),
        "hole_policy": hole_policy.kind.value,
        "far_distance": hole_policy.far_distance,
        "depth_codec": depth_codec.to_dict(),
        "workers": workers,
    }


def process_batch(
    manifest: DatasetManifest,
    params: FogParams,
    K: CameraIntrinsics,
    airlight_cfg: AirlightConfig,
    betas: Iterable[Union[str, float]],
    workers: int,
    out_dir: PathLike,
    hole_policy: HolePolicy = HolePolicy(),
    depth_codec: DepthCodecSpec = DepthCodecSpec(),
    excluded: int = 0,
    config_echo: Optional[Dict[str, Any]] = None,
) -> RunReport:
    """Render every (frame, beta) pair of ``manifest`` into ``out_dir``.

    Frames are the unit of work so each frame's depth and airlight are
    computed once and shared by all its densities. Output bytes do not depend
    on ``workers``. The report is written to ``out_dir/report.json``.
    """
    if int(workers) != workers or workers < 1:
        raise ConfigError(f"workers must be an integer >= 1, got {workers}")
    levels = tuple(beta_levels(betas))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [
        _FrameJob(rec, levels, params, K, airlight_cfg, hole_policy, depth_codec, out_dir)
        for rec in manifest.frames
    ]
    echo = config_echo or default_config_echo(levels, params, K, airlight_cfg, hole_policy, depth_codec, workers)

    start = time.perf_counter()
    results: Dict[int, FrameResult] = {}
    complete = True
    try:
        if workers == 1:
            for i, job in enumerate(jobs):
                results[i] = _run_frame(job)
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = {pool.submit(_run_frame, job): i for i, job in enumerate(jobs)}
                try:
                    for fut in as_completed(futures):
                        i = futures[fut]
                        try:
                            results[i] = fut.result()
                        except BrokenProcessPool:
                            complete = False
                            results[i] = FrameResult(
                                jobs[i].record.frame_id, STATUS_FAILED, errors=["worker process died"]
                            )
                except KeyboardInterrupt:
                    pool.shutdown(wait=True, cancel_futures=True)
                    raise
    except KeyboardInterrupt:
        complete = False
        log.warning("interrupted; writing partial report (%d of %d frames)", len(results), len(jobs))

    report = RunReport(
        frames=[results[i] for i in sorted(results)],
        betas=[lv.label for lv in levels],
        complete=complete and len(results) == len(jobs),
        excluded=excluded,
        total_time_s=time.perf_counter() - start,
        config=echo,
    )
    report.write(out_dir / REPORT_NAME)
    return report


# ---------------------------------------------------------------------------
# summaries

SUMMARY_KEYS = (
    "frames_attempted",
    "frames_ok",
    "frames_failed",
    "outputs",
    "annotation_copies",
    "annotation_errors",
    "excluded",
    "complete",
    "total_time_s",
    "mean_transmittance",
)


def summarize_run(report: RunReport, as_json: bool = False) -> str:
    """Aggregate statistics as text lines or a JSON object with ``SUMMARY_KEYS``."""
    agg = report.aggregate()
    per_beta: Dict[str, float] = {}
    for label in report.betas:
        vals = [f.mean_transmittance[label] for f in report.frames if label in f.mean_transmittance]
        if vals:
            per_beta[label] = float(np.mean(vals))
    summary = {k: agg[k] for k in SUMMARY_KEYS if k in agg}
    summary["mean_transmittance"] = per_beta
    if as_json:
        return json.dumps({"schema_version": REPORT_SCHEMA_VERSION, **summary}, sort_keys=True)
    lines = [
        f"frames: {agg['frames_attempted']}",
        f"ok: {agg['frames_ok']}",
        f"failed: {agg['frames_failed']}",
        f"outputs: {agg['outputs']}",
        f"annotation copies: {agg['annotation_copies']}",
        f"annotation errors: {agg['annotation_errors']}",
        f"excluded: {agg['excluded']}",
        f"complete: {'yes' if agg['complete'] else 'NO (partial run)'}",
        f"time: {agg['total_time_s']:.2f} s",
    ]
    lines += [f"mean t @ beta {label}: {v:.4f}" for label, v in per_beta.items()]
    failed = [f for f in report.frames if f.status == STATUS_FAILED]
    lines += [f"  {f.frame_id}: {'; '.join(f.errors)}" for f in failed]
    return "\n".join(lines)
