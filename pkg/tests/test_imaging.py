"""Binarization chain: blur, equalization, Otsu, morphology."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

from crystalscan.imaging import (BinaryMask, GrayImage, equalize_histogram,
                                 gaussian_blur, gaussian_kernel_1d,
                                 load_grayscale, morph_close_open,
                                 otsu_threshold, preprocess)
from crystalscan.params import default_parameters


def gray(pixels, cal=78.5):
    return GrayImage(pixels=np.asarray(pixels, dtype=np.uint8), pix_2_nm=cal)


def otsu_brute_force(pixels: np.ndarray) -> int:
    """Exhaustive 256-threshold argmax of between-class variance.

    Exact-integer oracle: compares (S*N - W*S_T)^2 / (W*(N-W)) across
    thresholds by cross-multiplication, so no float rounding is involved.
    """
    hist = np.bincount(pixels.ravel(), minlength=256)
    n = int(hist.sum())
    s_total = int((hist * np.arange(256)).sum())
    best = None
    w = s = 0
    for t in range(256):
        w += int(hist[t])
        s += int(t * hist[t])
        if w == 0 or w == n:
            continue
        num = (s * n - w * s_total) ** 2
        den = w * (n - w)
        if best is None or num * best[2] > best[1] * den:
            best = (t, num, den)
    return None if best is None else best[0]


class TestLoadGrayscale:
    def test_dimension_passthrough(self, tmp_path):
        from PIL import Image
        arr = np.random.default_rng(0).integers(0, 256, (48, 64), np.uint8)
        path = tmp_path / "img.tif"
        Image.fromarray(arr).save(path)
        img = load_grayscale(path, 78.5)
        assert (img.height, img.width) == (48, 64)
        assert np.array_equal(img.pixels, arr)
        assert img.pix_2_nm == 78.5

    def test_rgb_luminance_average(self, tmp_path):
        from PIL import Image
        rgb = np.zeros((8, 8, 3), np.uint8)
        rgb[..., 0] = 30
        rgb[..., 1] = 60
        rgb[..., 2] = 90
        path = tmp_path / "img.png"
        Image.fromarray(rgb).save(path)
        img = load_grayscale(path, 10.0)
        assert np.all(img.pixels == 60)

    def test_sixteen_bit_rescaled(self, tmp_path):
        from PIL import Image
        arr = np.array([[0, 1000], [2000, 4000]], dtype=np.uint16)
        path = tmp_path / "img.tif"
        Image.fromarray(arr).save(path)
        img = load_grayscale(path, 10.0)
        assert img.pixels[0, 0] == 0
        assert img.pixels[1, 1] == 255
        assert img.pixels[0, 1] == round(1000 / 4000 * 255)

    def test_truncated_file_is_unreadable(self, tmp_path):
        path = tmp_path / "broken.tif"
        path.write_bytes(b"II*\x00garbage")
        with pytest.raises(IOError, match="unreadable"):
            load_grayscale(path, 10.0)


class TestGaussianBlur:
    def test_zero_iterations_is_identity(self):
        img = gray(np.random.default_rng(1).integers(0, 256, (16, 16)))
        out = gaussian_blur(img, 0, 5)
        assert np.array_equal(out.pixels, img.pixels)

    def test_constant_image_unchanged(self):
        img = gray(np.full((20, 20), 137))
        out = gaussian_blur(img, 3, 7)
        assert np.all(out.pixels == 137)

    def test_even_kernel_rejected(self):
        img = gray(np.zeros((8, 8)))
        with pytest.raises(ValueError):
            gaussian_blur(img, 1, 4)

    def test_kernel_taps_sum_to_one(self):
        for k in (1, 3, 5, 17):
            assert gaussian_kernel_1d(k).sum() == pytest.approx(1.0)

    def test_impulse_matches_direct_convolution(self):
        # kernel 3, one iteration: compare against an independent dense
        # 2D convolution of the impulse with the separable kernel product
        canvas = np.zeros((21, 21))
        canvas[10, 10] = 255.0
        img = gray(canvas)
        out = gaussian_blur(img, 1, 3)
        taps = gaussian_kernel_1d(3)
        kernel2d = np.outer(taps, taps)
        assert kernel2d.sum() == pytest.approx(1.0)
        expected = np.round(ndimage.convolve(canvas, kernel2d, mode="reflect"))
        assert np.array_equal(out.pixels, expected.astype(np.uint8))

    @given(arrays(np.uint8, (12, 12), elements=st.integers(0, 255)))
    @settings(max_examples=40, deadline=None)
    def test_intensity_sum_preserved_up_to_rounding(self, pixels):
        img = gray(pixels)
        out = gaussian_blur(img, 2, 5)
        # float-path sum is exact under symmetric reflection; the single
        # final quantization moves each pixel by at most 0.5
        assert abs(int(out.pixels.sum(dtype=np.int64))
                   - int(pixels.sum(dtype=np.int64))) <= 0.5 * pixels.size + 1

    def test_kernel_one_is_identity_for_any_iterations(self):
        img = gray(np.random.default_rng(0).integers(0, 256, (12, 12)))
        out = gaussian_blur(img, 50, 1)
        assert np.array_equal(out.pixels, img.pixels)

    def test_commutes_with_translation_away_from_borders(self):
        rng = np.random.default_rng(3)
        canvas = np.zeros((64, 64))
        canvas[20:30, 20:30] = rng.integers(0, 256, (10, 10))
        shifted = np.roll(canvas, (4, 7), axis=(0, 1))
        blur_then_shift = np.roll(
            gaussian_blur(gray(canvas), 2, 5).pixels, (4, 7), axis=(0, 1))
        shift_then_blur = gaussian_blur(gray(shifted), 2, 5).pixels
        assert np.array_equal(blur_then_shift, shift_then_blur)


class TestEqualizeHistogram:
    def test_constant_image_maps_to_itself(self):
        img = gray(np.full((10, 10), 42))
        assert np.all(equalize_histogram(img).pixels == 42)

    def test_two_level_image_stretches_to_extremes(self):
        pixels = np.zeros((10, 10), np.uint8)
        pixels[:, 5:] = 255
        out = equalize_histogram(gray(pixels))
        # cdf remap: low level -> 0, high level -> 255 (hand computed)
        assert set(np.unique(out.pixels)) == {0, 255}
        assert np.all(out.pixels[:, :5] == 0)

    def test_three_level_hand_computed_remap(self):
        # levels 10 (50%), 20 (25%), 30 (25%) on 4x4:
        # cdf = 8, 12, 16 of 16; cdf_min = 8
        # lut(10) = 0; lut(20) = round(4/8*255) = 128; lut(30) = 255
        pixels = np.array([[10] * 8 + [20] * 4 + [30] * 4]).reshape(4, 4)
        out = equalize_histogram(gray(pixels))
        mapping = {10: 0, 20: 128, 30: 255}
        for level, target in mapping.items():
            assert np.all(out.pixels[pixels == level] == target)

    def test_uniform_histogram_is_near_identity(self):
        # every level exactly once -> the remap is the identity
        pixels = np.arange(256, dtype=np.uint8).reshape(16, 16)
        out = equalize_histogram(gray(pixels))
        assert np.array_equal(out.pixels, pixels)

    @given(arrays(np.uint8, (10, 10), elements=st.integers(0, 255)))
    @settings(max_examples=40, deadline=None)
    def test_monotone_intensity_ordering_preserved(self, pixels):
        out = equalize_histogram(gray(pixels)).pixels
        flat_in = pixels.ravel()
        flat_out = out.ravel()
        order = np.argsort(flat_in, kind="stable")
        assert np.all(np.diff(flat_out[order].astype(int)) >= 0)


class TestOtsuThreshold:
    def test_bimodal_matches_brute_force(self):
        rng = np.random.default_rng(5)
        pixels = np.clip(np.concatenate([
            rng.normal(40, 10, 600), rng.normal(200, 12, 400)
        ]), 0, 255).astype(np.uint8).reshape(-1, 50)
        t_oracle = otsu_brute_force(pixels)
        assert 40 < t_oracle < 200
        mask = otsu_threshold(gray(pixels))
        assert np.array_equal(mask.bits, pixels <= t_oracle)

    def test_constant_image_degenerate_path(self, caplog):
        bright = otsu_threshold(gray(np.full((6, 6), 250)))
        assert not bright.bits.any()
        dark = otsu_threshold(gray(np.full((6, 6), 3)))
        assert dark.bits.all()

    def test_inversion_pairing_against_oracle(self):
        rng = np.random.default_rng(6)
        pixels = rng.integers(0, 256, (32, 32), np.uint8)
        inverted = (255 - pixels).astype(np.uint8)
        for arr in (pixels, inverted):
            mask = otsu_threshold(gray(arr))
            assert np.array_equal(mask.bits, arr <= otsu_brute_force(arr))

    @given(arrays(np.uint8, (32, 32), elements=st.integers(0, 255)))
    @settings(max_examples=60, deadline=None)
    def test_equals_exhaustive_search_on_random_images(self, pixels):
        t_oracle = otsu_brute_force(pixels)
        mask = otsu_threshold(gray(pixels))
        if t_oracle is None:
            return  # degenerate single-level image, covered above
        assert np.array_equal(mask.bits, pixels <= t_oracle)


def dilate_oracle(bits: np.ndarray, k: int) -> np.ndarray:
    """Sliding-window max with background outside the frame.

    Dilation reflects the structuring element, so its window is the mirror
    of the erosion window; the pair composes to a true closing/opening.
    """
    pad = k // 2
    padded = np.pad(bits, ((k - 1 - pad, pad), (k - 1 - pad, pad)),
                    constant_values=False)
    out = np.zeros_like(bits)
    for r in range(bits.shape[0]):
        for c in range(bits.shape[1]):
            out[r, c] = padded[r:r + k, c:c + k].any()
    return out


def erode_oracle(bits: np.ndarray, k: int) -> np.ndarray:
    """Sliding-window min with foreground outside the frame."""
    pad = k // 2
    padded = np.pad(bits, ((pad, k - 1 - pad), (pad, k - 1 - pad)),
                    constant_values=True)
    out = np.zeros_like(bits)
    for r in range(bits.shape[0]):
        for c in range(bits.shape[1]):
            out[r, c] = padded[r:r + k, c:c + k].all()
    return out


class TestMorphCloseOpen:
    def test_unit_kernels_are_identity(self):
        bits = np.random.default_rng(7).random((15, 15)) < 0.5
        out = morph_close_open(BinaryMask(bits=bits), 1, 1)
        assert np.array_equal(out.bits, bits)

    def test_isolated_pixel_removed_by_opening(self):
        bits = np.zeros((9, 9), bool)
        bits[4, 4] = True
        out = morph_close_open(BinaryMask(bits=bits), 1, 3)
        assert not out.bits.any()

    def test_hole_filled_by_closing_matches_dilate_erode_oracle(self):
        bits = np.zeros((20, 20), bool)
        bits[4:16, 4:16] = True
        bits[9:11, 9:11] = False  # 2 px hole
        out = morph_close_open(BinaryMask(bits=bits), 5, 1)
        expected = erode_oracle(dilate_oracle(bits, 5), 5)
        assert out.bits[9:11, 9:11].all()
        assert np.array_equal(out.bits, expected)

    def test_matches_oracle_composition_on_random_masks(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            bits = rng.random((16, 16)) < 0.45
            close_k = int(rng.integers(1, 5))
            open_k = int(rng.integers(1, 5))
            got = morph_close_open(BinaryMask(bits=bits), close_k, open_k).bits
            exp = bits
            if close_k > 1:
                exp = erode_oracle(dilate_oracle(exp, close_k), close_k)
            if open_k > 1:
                exp = dilate_oracle(erode_oracle(exp, open_k), open_k)
            assert np.array_equal(got, exp)

    def test_closing_and_opening_are_idempotent(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            mask = BinaryMask(bits=rng.random((18, 18)) < 0.4)
            for k in (2, 3, 4):
                closed = morph_close_open(mask, k, 1)
                assert np.array_equal(
                    morph_close_open(closed, k, 1).bits, closed.bits)
                opened = morph_close_open(mask, 1, k)
                assert np.array_equal(
                    morph_close_open(opened, 1, k).bits, opened.bits)

    def test_rejects_zero_kernels(self):
        mask = BinaryMask(bits=np.ones((4, 4), bool))
        with pytest.raises(ValueError):
            morph_close_open(mask, 0, 1)


class TestPreprocess:
    def test_blur_kernel_arithmetic_with_tuned_values(self):
        p = default_parameters(1.9, 78.5)
        assert p.dspace_px == pytest.approx(149.15)
        assert p.blur_kernel_px == 17  # nearest odd to 0.12 * 149.15 = 17.898

    def test_fringe_image_gives_alternating_stripes(self):
        rows = np.arange(240)
        stripes = (128 + 60 * np.cos(2 * np.pi * rows / 48.0))
        pixels = np.tile(stripes[:, None], (1, 240)).astype(np.uint8)
        p = default_parameters(dspace_nm=48.0, pix_2_nm=1.0,
                               manual=False).replace(blur_iteration=2)
        mask = preprocess(gray(pixels, cal=1.0), p)
        # dark halves of each period are foreground
        dark = pixels <= np.median(pixels)
        transitions = np.count_nonzero(np.diff(mask.bits[:, 120]))
        assert 6 <= transitions <= 12  # ~5 periods -> ~10 edges
        overlap = (mask.bits & dark).sum() / mask.bits.sum()
        assert overlap > 0.95

    def test_all_white_image_has_empty_foreground(self):
        p = default_parameters(1.9, 78.5)
        img = gray(np.full((64, 64), 255))
        assert not preprocess(img, p).bits.any()

    def test_deterministic(self):
        rng = np.random.default_rng(10)
        img = gray(rng.integers(0, 256, (96, 96)))
        p = default_parameters(dspace_nm=10.0, pix_2_nm=1.0)
        a = preprocess(img, p)
        b = preprocess(img, p)
        assert np.array_equal(a.bits, b.bits)
