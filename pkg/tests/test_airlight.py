import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fogsynth.airlight import Aggregation, AirlightConfig, candidate_indices, dark_channel, estimate_airlight
from fogsynth.errors import ParameterError
from fogsynth.raster_io import ColorRaster

from oracles import dark_channel_loop


class TestDarkChannel:
    def test_uniform(self):
        img = np.broadcast_to(np.array([0.7, 0.2, 0.5]), (6, 5, 3))
        assert np.all(dark_channel(img, 2) == 0.2)

    def test_radius_zero_is_channel_min(self, rng):
        img = rng.uniform(size=(4, 6, 3))
        assert np.array_equal(dark_channel(img, 0), img.min(axis=2))

    @pytest.mark.parametrize("seed", range(10))
    @pytest.mark.parametrize("r", [1, 2])
    def test_matches_loop_oracle(self, seed, r):
        img = np.random.default_rng(seed).uniform(size=(5, 5, 3))
        assert np.array_equal(dark_channel(img, r), np.array(dark_channel_loop(img, r)))

    def test_accepts_raster(self, rng):
        raster = ColorRaster.from_codes(rng.integers(0, 256, size=(3, 3, 3)), 8)
        assert dark_channel(raster, 1).shape == (3, 3)

    def test_negative_radius(self):
        with pytest.raises(ParameterError):
            dark_channel(np.zeros((2, 2, 3)), -1)

    @settings(max_examples=40)
    @given(st.integers(0, 2**31 - 1), st.integers(0, 3))
    def test_monotone_under_brightening(self, seed, r):
        rng = np.random.default_rng(seed)
        img = rng.uniform(0, 0.8, size=(6, 7, 3))
        brighter = img.copy()
        v, u = rng.integers(6), rng.integers(7)
        brighter[v, u] += rng.uniform(0, 0.2, size=3)
        assert np.all(dark_channel(brighter, r) >= dark_channel(img, r))


class TestEstimateAirlight:
    def test_white_image(self):
        assert estimate_airlight(np.ones((20, 20, 3))) == (1.0, 1.0, 1.0)

    def test_bright_patch(self):
        img = np.zeros((15, 15, 3))
        img[6:9, 6:9] = 1.0
        cfg = AirlightConfig(patch_radius=1, brightest_fraction=1 / 225)
        # only the patch center has a 3x3 window fully inside the patch
        assert estimate_airlight(img, cfg) == (1.0, 1.0, 1.0)

    def test_cloudless_sky_gives_blue(self):
        img = np.empty((60, 80, 3))
        img[:20] = (0.3, 0.5, 0.9)
        img[20:] = np.random.default_rng(0).uniform(0.0, 0.25, size=(40, 80, 3))
        assert estimate_airlight(img) == pytest.approx((0.3, 0.5, 0.9))

    @pytest.mark.parametrize("agg", list(Aggregation))
    def test_within_candidate_range(self, agg, rng):
        img = rng.uniform(size=(30, 30, 3))
        cfg = AirlightConfig(patch_radius=1, brightest_fraction=0.05, aggregation=agg)
        light = np.array(estimate_airlight(img, cfg))
        idx = candidate_indices(dark_channel(img, 1), int(np.ceil(0.05 * 900)))
        cand = img.reshape(-1, 3)[idx]
        assert np.all(light >= cand.min(axis=0)) and np.all(light <= cand.max(axis=0))

    def test_max_intensity_tie_break_row_major(self):
        img = np.zeros((3, 3, 3))
        img[0, 2] = (0.9, 0.1, 0.5)
        img[2, 0] = (0.5, 0.1, 0.9)  # same dark value and same r+g+b
        cfg = AirlightConfig(patch_radius=0, brightest_fraction=2 / 9)
        assert estimate_airlight(img, cfg) == (0.9, 0.1, 0.5)

    def test_candidate_ties_row_major(self):
        dark = np.array([[0.5, 0.9, 0.5], [0.5, 0.9, 0.1]])
        assert candidate_indices(dark, 3).tolist() == [0, 1, 4]

    def test_permuting_non_candidates(self, rng):
        img = rng.uniform(0, 0.3, size=(20, 20, 3))
        img[2:8, 2:8] = (0.9, 0.8, 0.95)
        cfg = AirlightConfig(patch_radius=1, brightest_fraction=0.02)
        base = estimate_airlight(img, cfg)
        shuffled = img.copy()
        lower = shuffled[12:, :].reshape(-1, 3)
        shuffled[12:, :] = lower[rng.permutation(len(lower))].reshape(8, 20, 3)
        assert estimate_airlight(shuffled, cfg) == base

    def test_deterministic(self, rng):
        img = rng.uniform(size=(40, 40, 3))
        assert estimate_airlight(img) == estimate_airlight(img.copy())

    @pytest.mark.parametrize("kwargs", [dict(patch_radius=-1), dict(brightest_fraction=0),
                                        dict(brightest_fraction=1.5)])
    def test_config_validation(self, kwargs):
        with pytest.raises(ParameterError):
            AirlightConfig(**kwargs)
