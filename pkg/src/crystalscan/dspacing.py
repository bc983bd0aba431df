"""Lattice spacing and fringe orientation from the FFT of a crystal patch.

The largest axis-aligned square inside the crystal mask is cropped from the
original grayscale image, transformed to a power spectrum, and band-passed
around the nominal fringe frequency.  The peak's radius gives the d-spacing;
its direction gives the pattern angle.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft
from scipy import ndimage

from .imaging import GrayImage
from .params import ParameterSet

logger = logging.getLogger(__name__)

MIN_PATCH_SIDE = 16
# Zero-padding densifies the frequency grid so nearest-bin peak readout is
# accurate even when the patch spans only a few fringe periods.
DEFAULT_PAD_FACTOR = 4
MAX_PADDED_SIDE = 4096


@dataclass(frozen=True)
class DSpacingResult:
    """FFT peak readout for one crystal; fields are None when no peak."""

    d_nm: float | None
    pattern_angle_deg: float | None   # fringe-normal direction, (-180, 0]
    peak_radius_cycles: float | None  # cycles per patch side
    peak_power_ratio: float           # in-band mean power / above-band floor

    @property
    def found(self) -> bool:
        return self.d_nm is not None


NO_PEAK = DSpacingResult(d_nm=None, pattern_angle_deg=None,
                         peak_radius_cycles=None, peak_power_ratio=0.0)


def largest_inscribed_square(mask: np.ndarray) -> tuple[int, int, int]:
    """Largest axis-aligned square of foreground, as (top, left, side).

    The square is the biggest odd-sided one centered on a foreground pixel:
    side = 2 * max(chessboard distance transform) - 1, centered at the
    transform argmax, ties broken toward the smallest (row, col).
    """
    bits = np.asarray(mask, dtype=bool)
    if not bits.any():
        raise ValueError("empty mask has no inscribed square")
    padded = np.pad(bits, 1)  # frame of background so squares stay in bounds
    dist = ndimage.distance_transform_cdt(padded, metric="chessboard")[1:-1, 1:-1]
    d = int(dist.max())
    r, c = np.unravel_index(int(np.argmax(dist)), dist.shape)
    side = 2 * d - 1
    return (int(r) - (d - 1), int(c) - (d - 1), side)


def power_spectrum(patch: np.ndarray, pad_factor: int = DEFAULT_PAD_FACTOR,
                   window: bool = False) -> np.ndarray:
    """Centered power spectrum |FFT|^2 of a mean-subtracted square patch.

    Uses the orthonormal FFT so the spectrum sums to the patch's total
    squared deviation regardless of zero padding.  ``window`` applies a
    Hann taper to curb spectral leakage on small patches.
    """
    x = np.asarray(patch, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ValueError("patch must be a square 2D array")
    n = x.shape[0]
    x = x - x.mean()
    if window:
        taper = np.hanning(n)
        x = x * np.outer(taper, taper)
    padded = sfft.next_fast_len(max(n, pad_factor * n))
    spec = sfft.fft2(x, s=(padded, padded), norm="ortho")
    power = spec.real**2 + spec.imag**2  # shift the small real array, not spec
    return sfft.fftshift(power)


def bandpass_peak(spec: np.ndarray, p: ParameterSet, side: int) -> DSpacingResult:
    """Locate the fringe peak inside the band around the nominal frequency.

    The band keeps radii r (cycles per patch) with |r - r0| <= bandpass * r0,
    r0 = side / dspace_px.  Acceptance compares the mean in-band power with
    the mean power above the band (the high-frequency noise floor): for pure
    noise the ratio sits at 1, so a threshold of 1.0 keeps borderline peaks
    while 1.5 rejects featureless patches.  The reported peak is the
    strongest in-band bin (nearest-bin readout, no interpolation).
    """
    n_padded = spec.shape[0]
    center = n_padded // 2
    scale = side / n_padded  # cycles per frequency-grid step
    r0 = side / p.dspace_px
    half_width = p.dspace_bandpass * r0

    grid = np.arange(n_padded) - center
    radius = np.hypot(grid[:, None], grid[None, :]) * scale
    band = np.abs(radius - r0) <= half_width
    band &= radius > 0  # never count the DC bin
    if not band.any():
        return NO_PEAK

    band_power = spec[band]
    above = radius > r0 + half_width
    if not above.any():  # band reaches the grid corner: compare to the rest
        above = ~band & (radius > 0)
    floor = float(spec[above].mean()) if above.any() else 0.0
    if floor <= 0.0:
        return NO_PEAK
    ratio = float(band_power.mean()) / floor
    if ratio < p.powSpec_peak_thresh:
        return DSpacingResult(d_nm=None, pattern_angle_deg=None,
                              peak_radius_cycles=None, peak_power_ratio=ratio)

    flat_band = np.flatnonzero(band)
    peak_flat = flat_band[int(np.argmax(band_power))]
    pr, pc = np.unravel_index(peak_flat, spec.shape)
    r_peak = float(radius[pr, pc])
    d_px = side / r_peak
    fx = float(pc - center)
    fy = float(-(pr - center))  # y up so angles match the ellipse convention
    angle = math.degrees(math.atan2(fy, fx))
    if angle > 0.0:  # report the lower-half-plane member of the +-pair
        angle -= 180.0
    return DSpacingResult(d_nm=d_px / p.pix_2_nm,
                          pattern_angle_deg=angle,
                          peak_radius_cycles=r_peak,
                          peak_power_ratio=ratio)


def evaluate_dspacing(region_mask: np.ndarray, img: GrayImage, p: ParameterSet,
                      window: bool = False) -> DSpacingResult:
    """Measure d-spacing for one crystal region of ``img``.

    Crops the largest inscribed square of the region from the original
    grayscale image; regions whose square is under 16 px yield a no-peak
    result instead of an error.
    """
    top, left, side = largest_inscribed_square(region_mask)
    if side < MIN_PATCH_SIDE:
        logger.debug("inscribed square %d px too small for FFT", side)
        return NO_PEAK
    patch = img.pixels[top:top + side, left:left + side]
    pad = max(1, min(DEFAULT_PAD_FACTOR, MAX_PADDED_SIDE // side))
    spec = power_spectrum(patch, pad_factor=pad, window=window)
    return bandpass_peak(spec, p, side)
