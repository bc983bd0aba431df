"""Inscribed square, power spectrum, and band-pass peak readout."""
import math

import numpy as np
import pytest

from crystalscan.dspacing import (NO_PEAK, bandpass_peak, evaluate_dspacing,
                                  largest_inscribed_square, power_spectrum)
from crystalscan.graph import angdiff_180
from crystalscan.imaging import GrayImage
from crystalscan.params import default_parameters


def inscribed_oracle(mask):
    """Exhaustive search over odd pixel-centered squares."""
    h, w = mask.shape
    best = None
    for r in range(h):
        for c in range(w):
            if not mask[r, c]:
                continue
            d = 1
            while (r - d >= 0 and c - d >= 0 and r + d < h and c + d < w
                   and mask[r - d:r + d + 1, c - d:c + d + 1].all()):
                d += 1
            side = 2 * d - 1
            if best is None or side > best[2]:
                best = (r - (d - 1), c - (d - 1), side)
    return best


def sinusoid_patch(n, period, angle_deg=0.0, amplitude=60.0, offset=128.0,
                   phase=0.3):
    rows, cols = np.mgrid[0:n, 0:n].astype(float)
    x, y = cols, -rows
    a = math.radians(angle_deg)
    wave = np.cos(2 * np.pi * (x * math.cos(a) + y * math.sin(a)) / period
                  + phase)
    return offset + amplitude * wave


class TestLargestInscribedSquare:
    def test_filled_square_side_nine(self):
        mask = np.ones((10, 10), bool)
        top, left, side = largest_inscribed_square(mask)
        assert side == 9  # odd pixel-centered convention
        assert top >= 0 and left >= 0
        assert top + side <= 10 and left + side <= 10
        assert top <= 4.5 <= top + side  # contains the center

    def test_single_pixel(self):
        mask = np.zeros((5, 5), bool)
        mask[2, 3] = True
        assert largest_inscribed_square(mask) == (2, 3, 1)

    def test_l_shape_matches_exhaustive(self):
        mask = np.zeros((30, 30), bool)
        mask[2:28, 2:10] = True   # thick vertical arm
        mask[20:28, 2:28] = True  # horizontal foot
        got = largest_inscribed_square(mask)
        exp = inscribed_oracle(mask)
        assert got[2] == exp[2]
        assert got == exp

    def test_random_masks_match_exhaustive(self):
        rng = np.random.default_rng(3)
        from scipy import ndimage
        for _ in range(60):
            mask = ndimage.binary_dilation(
                rng.random((24, 24)) < 0.08, iterations=int(rng.integers(1, 4)))
            if not mask.any():
                continue
            got = largest_inscribed_square(mask)
            exp = inscribed_oracle(mask)
            assert got == exp
            top, left, side = got
            assert mask[top:top + side, left:left + side].all()

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError):
            largest_inscribed_square(np.zeros((4, 4), bool))


class TestPowerSpectrum:
    def test_constant_patch_is_all_zero(self):
        spec = power_spectrum(np.full((32, 32), 97.0))
        assert np.allclose(spec, 0.0)

    def test_horizontal_sinusoid_peak_on_vertical_axis(self):
        n, period = 128, 16
        rows = np.mgrid[0:n, 0:n][0].astype(float)
        patch = 100 + 50 * np.cos(2 * np.pi * rows / period)
        spec = power_spectrum(patch, pad_factor=4)
        p = spec.shape[0]
        center = p // 2
        pr, pc = np.unravel_index(np.argmax(spec), spec.shape)
        assert pc == center  # horizontal fringes: peak on the row-frequency axis
        radius_cycles = abs(pr - center) * n / p
        assert radius_cycles == pytest.approx(n / period, abs=n / p)
        # symmetric mirror peak carries the same power
        mirror = (2 * center - pr, 2 * center - pc)
        assert spec[mirror] == pytest.approx(spec[pr, pc], rel=1e-9)

    def test_parseval_identity(self):
        rng = np.random.default_rng(4)
        for pad in (1, 2, 4):
            patch = rng.uniform(0, 255, (48, 48))
            spec = power_spectrum(patch, pad_factor=pad)
            total = spec.sum()
            expected = patch.size * patch.var()
            assert total == pytest.approx(expected, rel=1e-9)

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            power_spectrum(np.zeros((8, 10)))


class TestBandpassPeak:
    def test_sinusoid_period_149_at_side_512(self):
        p = default_parameters(1.9, 78.5)
        side = 512
        patch = sinusoid_patch(side, 149.0)
        spec = power_spectrum(patch, pad_factor=4)
        res = bandpass_peak(spec, p, side)
        assert res.found
        bin_cycles = side / spec.shape[0]  # one frequency-grid step
        r_true = side / 149.0
        assert abs(res.peak_radius_cycles - r_true) <= bin_cycles
        assert res.d_nm == pytest.approx(149.0 / 78.5, rel=0.04)

    def test_white_noise_accept_reject(self):
        # noise is spectrally flat: the in-band/above-band ratio hovers at
        # 1.0, so threshold 1.0 is a borderline coin flip while threshold
        # 1.5 rejects every seeded patch
        side = 256
        p_accept = default_parameters(1.9, 78.5 * 256 / 512).replace(
            powSpec_peak_thresh=1.0)
        p_reject = p_accept.replace(powSpec_peak_thresh=1.5)
        n_accept = n_reject = 0
        ratios = []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            patch = rng.normal(128, 20, (side, side))
            spec = power_spectrum(patch, pad_factor=4)
            res_a = bandpass_peak(spec, p_accept, side)
            n_accept += res_a.found
            ratios.append(res_a.peak_power_ratio if not res_a.found
                          else res_a.peak_power_ratio)
            n_reject += bandpass_peak(spec, p_reject, side).found
        assert 4 <= n_accept <= 16  # borderline at 1.0
        assert n_reject == 0        # decisively rejected at 1.5
        assert all(0.7 < r < 1.5 for r in ratios)

    def test_fringe_ratio_dwarfs_noise_threshold(self):
        side = 256
        p = default_parameters(1.9, 78.5 * 256 / 512)
        patch = sinusoid_patch(side, p.dspace_px, angle_deg=-30.0,
                               amplitude=40.0)
        patch += np.random.default_rng(0).normal(0, 20, (side, side))
        res = bandpass_peak(power_spectrum(patch, pad_factor=4), p, side)
        assert res.found
        assert res.peak_power_ratio > 10.0

    def test_rotated_sinusoid_angle_readout(self):
        p = default_parameters(1.9, 64 / 1.9)
        side = 384
        for angle in (30.0, -30.0, 75.0, -120.0):
            patch = sinusoid_patch(side, 64.0, angle_deg=angle)
            spec = power_spectrum(patch, pad_factor=4)
            res = bandpass_peak(spec, p, side)
            assert res.found
            assert -180.0 < res.pattern_angle_deg <= 0.0
            assert angdiff_180(res.pattern_angle_deg, angle) < 2.0

    def test_peak_radius_halves_when_period_doubles(self):
        p = default_parameters(1.9, 48 / 1.9).replace(dspace_bandpass=0.5)
        side = 384
        r = {}
        for period in (48, 96):
            patch = sinusoid_patch(side, period)
            p_use = p.replace(pix_2_nm=period / 1.9)
            res = bandpass_peak(power_spectrum(patch, pad_factor=4),
                                p_use, side)
            assert res.found
            r[period] = res.peak_radius_cycles
        assert r[48] == pytest.approx(2 * r[96], rel=0.02)

    def test_intensity_offset_invariance(self):
        p = default_parameters(1.9, 64 / 1.9)
        side = 256
        patch = sinusoid_patch(side, 64.0, angle_deg=-40.0)
        res_a = bandpass_peak(power_spectrum(patch), p, side)
        res_b = bandpass_peak(power_spectrum(patch + 37.0), p, side)
        assert res_a.d_nm == res_b.d_nm
        assert res_a.pattern_angle_deg == res_b.pattern_angle_deg

    def test_empty_band_gives_no_peak(self):
        # nominal radius far below one cycle: the band contains no bins
        p = default_parameters(dspace_nm=10000.0, pix_2_nm=1.0).replace(
            dspace_bandpass=0.1)
        patch = sinusoid_patch(64, 16.0)
        res = bandpass_peak(power_spectrum(patch, pad_factor=1), p, 64)
        assert not res.found


class TestEvaluateDspacing:
    def test_small_region_yields_absent_d(self):
        p = default_parameters(1.9, 78.5)
        img = GrayImage(pixels=np.full((64, 64), 128, np.uint8), pix_2_nm=78.5)
        mask = np.zeros((64, 64), bool)
        mask[10:20, 10:20] = True  # inscribed square 9 < 16
        res = evaluate_dspacing(mask, img, p)
        assert res == NO_PEAK

    def test_synthetic_crystal_within_five_percent(self):
        from crystalscan.synth import fringe_image
        from crystalscan.pipeline import detect_regions
        p = default_parameters(1.9, 64 / 1.9).replace(ellipse_len_propCons=1.0)
        sample = fringe_image(size=640, period_px=64.0, angle_deg=-70.0,
                              noise_sigma=8.0, seed=3, pix_2_nm=64 / 1.9)
        regions = detect_regions(sample.image, p)
        assert len(regions) == 1
        res = evaluate_dspacing(regions[0].mask, sample.image, p)
        assert res.found
        assert res.d_nm == pytest.approx(1.9, rel=0.05)

    def test_inscribed_square_inside_mask(self):
        rng = np.random.default_rng(6)
        from scipy import ndimage
        for _ in range(20):
            mask = ndimage.binary_dilation(rng.random((40, 40)) < 0.05,
                                           iterations=3)
            if not mask.any():
                continue
            top, left, side = largest_inscribed_square(mask)
            assert mask[top:top + side, left:left + side].all()
