import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from fogsynth.geometry import encode_float32_raster
from fogsynth.raster_io import ColorRaster, atomic_write_bytes, encode_png

_ACCEPTANCE = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        number, title = marker.args
        _ACCEPTANCE.append((number, title, rep.outcome, rep.duration))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, outcome, duration in sorted(_ACCEPTANCE):
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict}  criterion {number:>2}: {title} ({duration:.2f} s)")


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def synthetic_scene(rng, height, width, cloud=False):
    """Sky over a textured ground plane; returns (codes uint8 HxWx3, planar depth HxW)."""
    horizon = height // 3
    img = np.empty((height, width, 3))
    rows = np.arange(height)[:, None]
    sky = np.stack(
        [0.30 + 0.05 * rows / height, 0.50 + 0.05 * rows / height, 0.90 - 0.05 * rows / height], axis=2
    )
    img[:horizon] = np.broadcast_to(sky[:horizon], (horizon, width, 3))
    ground = rng.uniform(0.05, 0.6, size=(height - horizon, width, 3))
    img[horizon:] = ground
    if cloud:
        img[2 : horizon - 2, width // 4 : width // 4 + max(20, width // 8)] = 0.96
    depth = np.empty((height, width))
    depth[:horizon] = 1000.0
    v = np.arange(horizon, height)[:, None] + 0.5
    depth[horizon:] = np.broadcast_to(2000.0 / (v - horizon + 1.0), (height - horizon, width))
    depth[horizon:] += rng.uniform(0.0, 0.5, size=(height - horizon, width))
    codes = np.rint(img * 255).astype(np.uint8)
    return codes, depth


def make_dataset(root: Path, n_frames: int, height: int = 32, width: int = 48, seed: int = 0, metadata=None):
    """Write a small on-disk dataset plus manifest.jsonl; returns the manifest path."""
    rng = np.random.default_rng(seed)
    root = Path(root)
    lines = []
    for i in range(n_frames):
        fid = f"{i:04d}"
        codes, depth = synthetic_scene(rng, height, width, cloud=bool(i % 2))
        atomic_write_bytes(root / "rgb" / f"{fid}.png", encode_png(codes))
        atomic_write_bytes(root / "depth" / f"{fid}.fdepth", encode_float32_raster(depth))
        labels = rng.integers(0, 19, size=(height, width), dtype=np.uint8)
        atomic_write_bytes(root / "class" / f"{fid}.png", encode_png(labels))
        (root / "meta").mkdir(parents=True, exist_ok=True)
        (root / "meta" / f"{fid}.json").write_text(json.dumps({"frame": i}))
        entry = {
            "frame_id": fid,
            "image": f"rgb/{fid}.png",
            "depth": f"depth/{fid}.fdepth",
            "annotations": [f"class/{fid}.png", f"meta/{fid}.json"],
            "metadata": (metadata[i] if metadata else {"sky_contrast": float(2 + i % 5)}),
        }
        lines.append(json.dumps(entry))
    manifest = root / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def gray_raster():
    def make(value, height=4, width=4, bit_depth=8):
        return ColorRaster(np.full((height, width, 3), float(value)), bit_depth)

    return make
