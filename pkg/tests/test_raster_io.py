import hashlib

import numpy as np
import pytest

from fogsynth.errors import FormatError, InputError, ShapeError
from fogsynth.raster_io import (
    ColorRaster,
    LabelRaster,
    beta_suffix_rule,
    copy_annotations,
    png_size,
    read_image,
    read_label,
    write_image,
    write_label,
)


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.mark.parametrize("bit_depth", [8, 16])
def test_round_trip_bit_exact(tmp_path, rng, bit_depth):
    codes = rng.integers(0, 2**bit_depth, size=(7, 9, 3))
    raster = ColorRaster.from_codes(codes, bit_depth)
    path = write_image(raster, tmp_path / "a.png")
    back = read_image(path)
    assert back.bit_depth == bit_depth
    assert np.array_equal(back.to_codes(), codes)
    assert np.array_equal(back.data, raster.data)
    # rewriting the decoded raster reproduces the file
    again = write_image(back, tmp_path / "b.png")
    assert digest(again) == digest(path)


def test_normalization(tmp_path):
    write_image(ColorRaster.from_codes(np.full((1, 1, 3), 255), 8), tmp_path / "w.png")
    assert read_image(tmp_path / "w.png").data[0, 0, 0] == 1.0
    write_image(ColorRaster.from_codes(np.full((1, 1, 3), 32768), 16), tmp_path / "h.png")
    assert read_image(tmp_path / "h.png").data[0, 0, 0] == pytest.approx(32768 / 65535)


def test_channel_order_preserved(tmp_path):
    codes = np.zeros((1, 1, 3), dtype=int)
    codes[0, 0] = (10, 20, 30)
    write_image(ColorRaster.from_codes(codes, 8), tmp_path / "c.png")
    assert read_image(tmp_path / "c.png").to_codes()[0, 0].tolist() == [10, 20, 30]


def test_quantization_half_to_even():
    raster = ColorRaster(np.array([[[0.5 / 255, 1.5 / 255, 2.5 / 255]]]), 8)
    assert raster.to_codes().tolist() == [[[0, 2, 2]]]


def test_truncated_and_foreign(tmp_path):
    path = write_image(ColorRaster(np.full((16, 16, 3), 0.5)), tmp_path / "a.png")
    blob = path.read_bytes()
    (tmp_path / "t.png").write_bytes(blob[: len(blob) // 2])
    (tmp_path / "j.jpg").write_bytes(b"\xff\xd8\xff\xe0junk")
    for name in ("t.png", "j.jpg"):
        with pytest.raises(FormatError):
            read_image(tmp_path / name)


def test_missing_file(tmp_path):
    with pytest.raises(InputError):
        read_image(tmp_path / "nope.png")


def test_shape_validation():
    with pytest.raises(ShapeError):
        ColorRaster(np.zeros((4, 4)))
    with pytest.raises(ShapeError):
        ColorRaster(np.zeros((0, 4, 3)))
    with pytest.raises(FormatError):
        ColorRaster(np.zeros((1, 1, 3)), bit_depth=12)


def test_png_size(tmp_path):
    path = write_image(ColorRaster(np.zeros((5, 11, 3))), tmp_path / "s.png")
    assert png_size(path) == (11, 5)


def test_label_round_trip(tmp_path, rng):
    label = LabelRaster(rng.integers(0, 34, size=(6, 8)))
    back = read_label(write_label(label, tmp_path / "l.png"))
    assert np.array_equal(back.data, label.data)
    with pytest.raises(ShapeError):
        back.check_matches(ColorRaster(np.zeros((6, 9, 3))))


class TestCopyAnnotations:
    def test_hash_equal(self, tmp_path, rng):
        src = write_label(LabelRaster(rng.integers(0, 19, size=(5, 5))), tmp_path / "src" / "0001.png")
        written, errors = copy_annotations([src], tmp_path / "dst")
        assert errors == [] and digest(written[0]) == digest(src)

    def test_missing_source_is_not_fatal(self, tmp_path):
        srcs = []
        for i in range(3):
            p = tmp_path / "src" / f"{i}.json"
            p.parent.mkdir(exist_ok=True)
            p.write_text(f'{{"i": {i}}}')
            srcs.append(p)
        srcs.insert(1, tmp_path / "src" / "missing.png")
        written, errors = copy_annotations(srcs, tmp_path / "dst")
        assert len(written) == 3 and len(errors) == 1
        assert "missing.png" in errors[0].source

    def test_naming_rule(self, tmp_path, rng):
        src = write_label(LabelRaster(rng.integers(0, 19, size=(5, 5))), tmp_path / "0001.png")
        written, _ = copy_annotations([src], tmp_path / "out", beta_suffix_rule("0.02"))
        assert written[0].name == "0001_beta_0.02.png"
        assert digest(written[0]) == digest(src)
