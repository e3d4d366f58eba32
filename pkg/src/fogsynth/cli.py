"""``fog`` command line: single, batch, calibrate, filter.

Exit codes: 0 everything succeeded, 2 some frames or annotation copies
failed, 1 fatal configuration or I/O error (including usage errors).

Settings resolve as command-line flags > ``--config`` JSON file > defaults.
The config file uses the same schema as the ``config`` block of a batch
report, so a report can be fed back to reproduce its run.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from .airlight import AirlightConfig
from .errors import ConfigError, FogError
from .geometry import CameraIntrinsics, DepthCodecSpec, HolePolicy
from .optics import (
    CANONICAL_BETAS,
    FogClass,
    FogParams,
    beta_from_mor,
    mor_from_beta,
    validate_fog_beta,
)
from .pipeline import (
    FrameRecord,
    beta_levels,
    filter_manifest,
    output_name,
    process_batch,
    read_manifest,
    render_variants,
    split_holdout,
    summarize_run,
    write_manifest,
)
from .raster_io import atomic_write_bytes, encode_png, png_size

log = logging.getLogger("fogsynth")

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2


@dataclass
class RunConfig:
    image: Optional[str] = None
    depth: Optional[str] = None
    frame_id: Optional[str] = None
    manifest: Optional[str] = None
    root: Optional[str] = None
    out_dir: Optional[str] = None
    betas: Optional[List[str]] = None
    mors: Optional[List[str]] = None
    airlight: Any = "estimated"
    blend_space: str = "gamma"
    hole_policy: str = "reject"
    far_distance: float = 1000.0
    workers: int = 1
    intrinsics: Dict[str, Any] = field(default_factory=dict)
    depth_codec: Dict[str, Any] = field(default_factory=lambda: {"codec": "float32_raster"})
    airlight_config: Dict[str, Any] = field(default_factory=lambda: AirlightConfig().to_dict())
    where: List[str] = field(default_factory=list)
    dry_run: bool = False

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**d)
        for key in ("betas", "mors"):
            value = getattr(cfg, key)
            if value is not None:
                setattr(cfg, key, [str(v) for v in value])
        return cfg

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def beta_values(self) -> List[str]:
        """Resolved beta labels; MOR values are converted with full float precision."""
        if self.betas is not None and self.mors is not None:
            raise ConfigError("give either betas or MOR values, not both")
        if self.mors is not None:
            return [repr(beta_from_mor(_number(m, "MOR"))) for m in self.mors]
        if self.betas is not None:
            return list(self.betas)
        raise ConfigError("no fog density given: use --beta or --mor")

    def fog_params(self) -> FogParams:
        airlight = None if self.airlight in (None, "estimated") else tuple(self.airlight)
        return FogParams(beta=0.0, airlight=airlight, blend_space=self.blend_space)

    def hole(self) -> HolePolicy:
        return HolePolicy(self.hole_policy, float(self.far_distance))

    def codec(self) -> DepthCodecSpec:
        return DepthCodecSpec.from_dict(self.depth_codec)

    def airlight_cfg(self) -> AirlightConfig:
        return AirlightConfig(**self.airlight_config)

    def camera(self, first_image: Optional[Path]) -> CameraIntrinsics:
        k = dict(self.intrinsics)
        if "fx" not in k:
            raise ConfigError("camera focal length is required (--fx)")
        if "cx" not in k or "cy" not in k:
            if first_image is None:
                raise ConfigError("principal point (--cx/--cy) is required")
            width, height = png_size(first_image)
            k.setdefault("cx", width / 2.0)
            k.setdefault("cy", height / 2.0)
        return CameraIntrinsics.from_dict(k)


def _number(text: str, what: str) -> float:
    try:
        return float(text)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} value {text!r} is not a number") from None


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors, which this tool reserves for partial failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_FATAL, f"{self.prog}: error: {message}\n")


def _add_density(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--beta", nargs="+", metavar="B", help="attenuation coefficients in 1/m")
    g.add_argument("--mor", nargs="+", metavar="M", help="visibilities in meters")


def _add_render(p: argparse.ArgumentParser) -> None:
    _add_density(p)
    p.add_argument("--config", help="JSON config file (same schema as a report's config echo)")
    p.add_argument("--out-dir")
    a = p.add_mutually_exclusive_group()
    a.add_argument("--airlight-color", nargs=3, type=float, metavar=("R", "G", "B"),
                   help="fixed atmospheric light, channels in [0, 1]")
    a.add_argument("--estimate-airlight", action="store_true", help="estimate from the image (default)")
    p.add_argument("--blend-space", choices=["gamma", "linear"])
    p.add_argument("--hole-policy", choices=["reject", "max_distance", "nearest_valid"])
    p.add_argument("--far-distance", type=float, help="fill value in meters for max_distance")
    p.add_argument("--fx", type=float)
    p.add_argument("--fy", type=float, help="defaults to fx")
    p.add_argument("--cx", type=float, help="defaults to the image center")
    p.add_argument("--cy", type=float, help="defaults to the image center")
    p.add_argument("--depth-codec", choices=["float32_raster", "scaled_u16_png", "disparity_u16_png"])
    p.add_argument("--depth-scale", type=float, help="meters per unit for scaled_u16_png")
    p.add_argument("--baseline", type=float, help="stereo baseline in meters for disparity_u16_png")
    p.add_argument("--disparity-fx", type=float, help="focal length in pixels for disparity_u16_png")
    p.add_argument("--patch-radius", type=int)
    p.add_argument("--brightest-fraction", type=float)
    p.add_argument("--aggregation", choices=["max_intensity", "mean"])
    p.add_argument("--json", action="store_true", help="machine-readable output on stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fog", description="Render physically-based homogeneous fog from depth.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("single", help="fog one image at one or more densities")
    p.add_argument("--image", help="clear RGB PNG")
    p.add_argument("--depth", help="depth file")
    p.add_argument("--frame-id", help="output name prefix (default: image stem)")
    _add_render(p)

    p = sub.add_parser("batch", help="fog every frame of a JSON Lines manifest")
    p.add_argument("--manifest")
    p.add_argument("--root", help="base for relative manifest paths (default: manifest dir)")
    p.add_argument("--workers", type=int)
    p.add_argument("--where", action="append", help="metadata predicate, e.g. 'sky_contrast <= 3'")
    p.add_argument("--dry-run", action="store_true", help="validate and count, write nothing")
    _add_render(p)

    p = sub.add_parser("calibrate", help="convert between beta and visibility (MOR)")
    _add_density(p)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("filter", help="filter a manifest on frame metadata")
    p.add_argument("--manifest", required=True)
    p.add_argument("--where", action="append", default=[], help="metadata predicate, repeatable (AND)")
    p.add_argument("--out", required=True, help="filtered manifest path")
    p.add_argument("--holdout", type=int, default=0, help="move the last N kept frames to --holdout-out")
    p.add_argument("--holdout-out")
    p.add_argument("--json", action="store_true")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, the optional config file and explicit flags."""
    base: Dict[str, Any] = {}
    if getattr(args, "config", None):
        try:
            base = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load config {args.config}: {exc}") from None
        if not isinstance(base, dict):
            raise ConfigError("config file must hold a JSON object")
    cfg = RunConfig.from_dict(base)

    def flag(name):
        return getattr(args, name, None)

    for name in ("image", "depth", "frame_id", "manifest", "root", "out_dir", "blend_space",
                 "hole_policy", "far_distance", "workers"):
        if flag(name) is not None:
            setattr(cfg, name, flag(name))
    if flag("beta") is not None:
        cfg.betas, cfg.mors = list(flag("beta")), None
    if flag("mor") is not None:
        cfg.betas, cfg.mors = None, list(flag("mor"))
    if flag("airlight_color") is not None:
        cfg.airlight = list(flag("airlight_color"))
    elif flag("estimate_airlight"):
        cfg.airlight = "estimated"
    for name in ("fx", "fy", "cx", "cy"):
        if flag(name) is not None:
            cfg.intrinsics[name] = flag(name)
    if flag("depth_codec") is not None and flag("depth_codec") != cfg.depth_codec.get("codec"):
        cfg.depth_codec = {"codec": flag("depth_codec")}
    for opt, key in (("depth_scale", "scale"), ("baseline", "baseline"), ("disparity_fx", "fx")):
        if flag(opt) is not None:
            cfg.depth_codec[key] = flag(opt)
    for name in ("patch_radius", "brightest_fraction", "aggregation"):
        if flag(name) is not None:
            cfg.airlight_config[name] = flag(name)
    if flag("where"):
        cfg.where = list(flag("where"))
    if flag("dry_run"):
        cfg.dry_run = True
    return cfg


def _warn_density(labels: Sequence[str]) -> None:
    for label in labels:
        kind = validate_fog_beta(float(label))
        if kind is FogClass.HAZE:
            log.warning("beta %s is haze, not fog (MOR %.0f m > 1 km)", label, mor_from_beta(float(label)))
        elif kind is FogClass.CLEAR:
            log.warning("beta %s renders no fog", label)


def _emit(obj: Dict[str, Any], as_json: bool, text: str) -> None:
    print(json.dumps(obj, sort_keys=True) if as_json else text)


def cmd_single(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    labels = cfg.beta_values()
    levels = beta_levels(labels)
    if not cfg.image or not cfg.depth:
        raise ConfigError("single needs --image and --depth")
    _warn_density(labels)
    image = Path(cfg.image)
    record = FrameRecord(cfg.frame_id or image.stem, image, Path(cfg.depth))
    K = cfg.camera(image)
    out_dir = Path(cfg.out_dir) if cfg.out_dir else image.parent

    light, source, variants = render_variants(
        record, levels, cfg.fog_params(), K, cfg.airlight_cfg(), cfg.hole(), cfg.codec()
    )
    rows = []
    for level, foggy, mean_t in variants:
        dst = out_dir / output_name(record.frame_id, level.label)
        atomic_write_bytes(dst, encode_png(foggy.to_codes()))
        rows.append({"beta": level.label, "output": str(dst), "mean_transmittance": mean_t})
    text = [f"airlight ({source}): " + ", ".join(f"{c:.4f}" for c in light)]
    text += [f"beta {r['beta']}: mean t = {r['mean_transmittance']:.4f} -> {r['output']}" for r in rows]
    _emit({"airlight": list(light), "airlight_source": source, "outputs": rows}, cfg_json(args), "\n".join(text))
    return EXIT_OK


def cfg_json(args: argparse.Namespace) -> bool:
    return bool(getattr(args, "json", False))


def cmd_batch(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    labels = cfg.beta_values()
    levels = beta_levels(labels)
    if int(cfg.workers) < 1:
        raise ConfigError(f"workers must be >= 1, got {cfg.workers}")
    if not cfg.manifest:
        raise ConfigError("batch needs --manifest")
    if not cfg.dry_run and not cfg.out_dir:
        raise ConfigError("batch needs --out-dir")
    params, hole, codec, air = cfg.fog_params(), cfg.hole(), cfg.codec(), cfg.airlight_cfg()
    _warn_density(labels)

    manifest = read_manifest(cfg.manifest, cfg.root)
    filtered = filter_manifest(manifest, cfg.where)
    frames = filtered.manifest
    if not frames.frames and not cfg.dry_run:
        raise ConfigError("no frames left to process")

    if cfg.dry_run:
        missing = [str(p) for rec in frames.frames for p in (rec.image, rec.depth) if not p.exists()]
        for path in missing:
            log.warning("missing input: %s", path)
        planned = len(frames) * len(levels)
        info = {"frames": len(frames), "betas": len(levels), "planned_outputs": planned,
                "excluded": filtered.excluded, "missing_inputs": len(missing)}
        text = (f"frames: {len(frames)}\nexcluded: {filtered.excluded}\n"
                f"betas: {len(levels)}\nplanned outputs: {planned}\nmissing inputs: {len(missing)}")
        _emit(info, cfg_json(args), text)
        return EXIT_OK

    K = cfg.camera(frames.frames[0].image)
    echo = cfg.to_dict()
    echo.update(betas=[lv.label for lv in levels], mors=None, intrinsics=K.to_dict(), dry_run=False,
                depth_codec=codec.to_dict(), airlight_config=air.to_dict(),
                manifest=str(Path(cfg.manifest).resolve()), out_dir=str(Path(cfg.out_dir).resolve()),
                root=str(Path(cfg.root).resolve()) if cfg.root else None)
    report = process_batch(frames, params, K, air, labels, int(cfg.workers), cfg.out_dir,
                           hole, codec, excluded=filtered.excluded, config_echo=echo)
    print(summarize_run(report, as_json=cfg_json(args)))
    return EXIT_OK if report.ok else EXIT_PARTIAL


def cmd_calibrate(args: argparse.Namespace) -> int:
    if args.beta is None and args.mor is None:
        raise ConfigError("give --beta or --mor values")
    rows = []
    if args.beta is not None:
        for text in args.beta:
            beta = _number(text, "beta")
            rows.append((beta, mor_from_beta(beta)))
    else:
        for text in args.mor:
            mor = _number(text, "MOR")
            rows.append((beta_from_mor(mor), mor))
    table = []
    for beta, mor in rows:
        table.append({
            "beta": beta,
            "mor_m": mor,
            "class": validate_fog_beta(beta).value,
            "canonical": any(abs(beta - c) <= 1e-12 for c in CANONICAL_BETAS),
        })
    if args.json:
        print(json.dumps(table))
        return EXIT_OK
    print(f"{'beta (1/m)':>12}  {'MOR (m)':>10}  class")
    for row in table:
        star = "  *" if row["canonical"] else ""
        print(f"{row['beta']:>12.6g}  {row['mor_m']:>10.2f}  {row['class']}{star}")
    if any(r["canonical"] for r in table):
        print("* reference fog density")
    return EXIT_OK


def cmd_filter(args: argparse.Namespace) -> int:
    manifest = read_manifest(args.manifest)
    result = filter_manifest(manifest, args.where)
    kept, held = split_holdout(result.manifest, args.holdout)
    if args.holdout and not args.holdout_out:
        raise ConfigError("--holdout needs --holdout-out")
    write_manifest(kept, args.out)
    if args.holdout:
        write_manifest(held, args.holdout_out)
    info = {
        "input": len(manifest),
        "kept": len(kept),
        "held_out": len(held),
        "excluded": result.excluded,
        "missing_key": result.missing_key,
        "non_numeric": result.non_numeric,
        "rejected": result.rejected,
    }
    text = "\n".join(f"{k.replace('_', ' ')}: {v}" for k, v in info.items())
    _emit(info, args.json, text)
    return EXIT_OK


COMMANDS = {"single": cmd_single, "batch": cmd_batch, "calibrate": cmd_calibrate, "filter": cmd_filter}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except FogError as exc:
        print(f"fog {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FATAL
    except OSError as exc:
        print(f"fog {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_FATAL
    except (TypeError, ValueError) as exc:
        print(f"fog {args.command}: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
