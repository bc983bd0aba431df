"""Micrograph loading and binarization.

Turns a raw grayscale micrograph into a denoised binary mask in which the
dark polymer fringes are foreground: iterated Gaussian blur, histogram
equalization, Otsu thresholding, then morphological closing and opening.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from PIL import Image
from scipy import ndimage

from .params import ParameterSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GrayImage:
    """8-bit grayscale raster with pixel-per-nm calibration."""

    pixels: np.ndarray  # (H, W) uint8
    pix_2_nm: float

    def __post_init__(self) -> None:
        if self.pixels.ndim != 2 or self.pixels.size == 0:
            raise ValueError("GrayImage needs a non-empty 2D array")
        if self.pixels.dtype != np.uint8:
            raise ValueError("GrayImage pixels must be uint8")
        if not self.pix_2_nm > 0:
            raise ValueError("pix_2_nm must be > 0")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class BinaryMask:
    """Boolean raster; True marks foreground (polymer)."""

    bits: np.ndarray  # (H, W) bool

    def __post_init__(self) -> None:
        if self.bits.ndim != 2 or self.bits.size == 0:
            raise ValueError("BinaryMask needs a non-empty 2D array")
        if self.bits.dtype != np.bool_:
            raise ValueError("BinaryMask bits must be bool")

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]


def load_grayscale(path: str | Path, pix_2_nm: float) -> GrayImage:
    """Load a TIFF/PNG micrograph as 8-bit grayscale.

    Multi-channel inputs are converted by channel averaging; higher
    bit-depth inputs are rescaled linearly to the 0..255 range.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            arr = np.asarray(im)
    except Exception as exc:
        raise IOError(f"unreadable image file {path}: {exc}") from exc
    if arr.size == 0:
        raise IOError(f"zero-sized image {path}")
    eight_bit = arr.dtype == np.uint8
    if arr.ndim == 3:  # RGB(A): luminance average over color channels
        arr = arr[..., :3].astype(np.float64).mean(axis=2)
    if not eight_bit:  # deeper or float data: rescale linearly to 0..255
        arr = arr.astype(np.float64)
        lo, hi = arr.min(), arr.max()
        arr = (arr - lo) / (hi - lo) * 255.0 if hi > lo else np.zeros_like(arr)
    return GrayImage(pixels=np.round(arr).astype(np.uint8), pix_2_nm=pix_2_nm)


def gaussian_kernel_1d(kernel_px: int) -> np.ndarray:
    """Sampled Gaussian taps with sigma = kernel/6, normalized to sum 1."""
    if kernel_px < 1 or kernel_px % 2 == 0:
        raise ValueError(f"kernel size must be odd and >= 1, got {kernel_px}")
    if kernel_px == 1:
        return np.ones(1)
    sigma = kernel_px / 6.0
    half = kernel_px // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    taps = np.exp(-0.5 * (x / sigma) ** 2)
    return taps / taps.sum()


def gaussian_blur(img: GrayImage, iterations: int, kernel_px: int) -> GrayImage:
    """Apply a separable Gaussian blur ``iterations`` times.

    Iterations run on a float32 buffer and quantize back to uint8 once at
    the end.  Symmetric-reflect borders keep the total intensity constant
    up to rounding.
    """
    if kernel_px % 2 == 0 or kernel_px < 1:
        raise ValueError(f"blur kernel must be odd and >= 1, got {kernel_px}")
    if iterations <= 0 or kernel_px == 1:
        return img
    taps = gaussian_kernel_1d(kernel_px).astype(np.float32)
    buf = img.pixels.astype(np.float32)
    for _ in range(iterations):
        buf = cv2.sepFilter2D(buf, -1, taps, taps, borderType=cv2.BORDER_REFLECT)
    out = np.clip(np.round(buf), 0, 255).astype(np.uint8)
    return GrayImage(pixels=out, pix_2_nm=img.pix_2_nm)


def equalize_histogram(img: GrayImage) -> GrayImage:
    """Stretch contrast by the standard cumulative-histogram remap.

    Level i maps to round((cdf(i) - cdf_min) / (N - cdf_min) * 255); a
    single-level image is returned unchanged.
    """
    hist = np.bincount(img.pixels.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    nonzero = cdf[hist > 0]
    cdf_min = int(nonzero[0])
    total = int(cdf[-1])
    if total == cdf_min:  # constant image
        return img
    lut = np.round((cdf - cdf_min) / (total - cdf_min) * 255.0)
    lut = np.clip(lut, 0, 255).astype(np.uint8)
    return GrayImage(pixels=lut[img.pixels], pix_2_nm=img.pix_2_nm)


def otsu_threshold(img: GrayImage) -> BinaryMask:
    """Binarize so that dark pixels (<= Otsu threshold) become foreground.

    The threshold maximizes the between-class variance over the 256
    intensity bins; ties resolve to the lowest threshold.
    """
    hist = np.bincount(img.pixels.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    omega = np.cumsum(hist) / total          # class-0 probability for t = 0..255
    mu = np.cumsum(hist * np.arange(256)) / total
    mu_total = mu[-1]
    denom = omega * (1.0 - omega)
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma_b = (mu_total * omega - mu) ** 2 / denom
    sigma_b[denom <= 0] = -np.inf  # t with an empty class cannot split
    if not np.isfinite(sigma_b).any():
        # single-intensity image: fall back to the midpoint so an all-dark
        # frame is all polymer and an all-bright frame is all background
        logger.warning("single-intensity image: no Otsu split, thresholding "
                       "at the 127 midpoint")
        return BinaryMask(bits=img.pixels <= 127)
    t = int(np.argmax(sigma_b))
    return BinaryMask(bits=img.pixels <= t)


def _square(k: int) -> np.ndarray:
    return np.ones((k, k), dtype=bool)


def morph_close_open(mask: BinaryMask, close_k: int, open_k: int) -> BinaryMask:
    """Close then open with square structuring elements.

    Closing fills background specks up to the closing kernel; opening then
    removes foreground specks up to the opening kernel.  Erosion treats
    pixels outside the frame as foreground so border regions survive.
    """
    if close_k < 1 or open_k < 1:
        raise ValueError("kernel sizes must be >= 1")
    bits = mask.bits
    if close_k > 1:
        bits = ndimage.binary_dilation(bits, structure=_square(close_k), border_value=0)
        bits = ndimage.binary_erosion(bits, structure=_square(close_k), border_value=1)
    if open_k > 1:
        bits = ndimage.binary_erosion(bits, structure=_square(open_k), border_value=1)
        bits = ndimage.binary_dilation(bits, structure=_square(open_k), border_value=0)
    return BinaryMask(bits=np.ascontiguousarray(bits))


def preprocess(img: GrayImage, p: ParameterSet) -> BinaryMask:
    """Full binarization chain: blur, equalize, threshold, close/open."""
    blurred = gaussian_blur(img, p.blur_iteration, p.blur_kernel_px)
    equalized = equalize_histogram(blurred)
    mask = otsu_threshold(equalized)
    return morph_close_open(mask, p.closing_k_size, p.opening_k_size)
