"""Moment-based ellipse fits and straightness filtering for bones.

Each bone gets the equivalent ellipse of its pixel set (centroid plus
4*sqrt of the second-central-moment eigenvalues); curved bones are then
rejected by thresholding the major/minor aspect ratio.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .params import ParameterSet
from .skeleton import Bone

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EllipseDescriptor:
    """Equivalent ellipse of a pixel set.

    ``theta_deg`` is the major-axis angle versus the image x (column) axis,
    counterclockwise positive with the image displayed row-0-on-top, folded
    to (-90, 90] since an axis is a line rather than a ray.
    """

    center: tuple[float, float]  # (row, col)
    major_len: float
    minor_len: float
    theta_deg: float

    @property
    def aspect(self) -> float:
        """major/minor ratio; infinite for perfectly collinear pixel sets."""
        if self.minor_len == 0.0:
            return math.inf
        return self.major_len / self.minor_len


def fold_axis_angle(theta_deg: float) -> float:
    """Fold a line angle into (-90, 90]."""
    theta = math.fmod(theta_deg, 180.0)
    if theta > 90.0:
        theta -= 180.0
    elif theta <= -90.0:
        theta += 180.0
    return theta


def fit_ellipse(pixels: np.ndarray) -> EllipseDescriptor:
    """Fit the moment-equivalent ellipse to an (n, 2) array of (row, col).

    Axis lengths are 4*sqrt of the eigenvalues of the population covariance
    of the point set; the angle follows the largest eigenvector.
    """
    pts = np.asarray(pixels, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("pixels must be an (n, 2) array")
    if len(pts) < 2 or (pts.max(axis=0) == pts.min(axis=0)).all():
        raise ValueError("degenerate bone: need >= 2 distinct pixels")
    center = pts.mean(axis=0)
    # x = column, y = -row, so positive angles run counterclockwise on screen
    x = pts[:, 1] - center[1]
    y = -(pts[:, 0] - center[0])
    cov = np.array([
        [np.mean(x * x), np.mean(x * y)],
        [np.mean(x * y), np.mean(y * y)],
    ])
    eigvals, eigvecs = np.linalg.eigh(cov)
    minor = 4.0 * math.sqrt(max(eigvals[0], 0.0))
    major = 4.0 * math.sqrt(max(eigvals[1], 0.0))
    vx, vy = eigvecs[:, 1]
    theta = fold_axis_angle(math.degrees(math.atan2(vy, vx)))
    return EllipseDescriptor(center=(center[0], center[1]),
                             major_len=major, minor_len=minor, theta_deg=theta)


def fit_bone_ellipses(bones: list[Bone]) -> list[Bone]:
    """Fit ellipses in place, dropping bones too degenerate to fit."""
    fitted = []
    for bone in bones:
        try:
            bone.ellipse = fit_ellipse(bone.pixels)
        except ValueError:
            logger.debug("dropping degenerate bone (%d px)", len(bone.pixels))
            continue
        fitted.append(bone)
    return fitted


def filter_aspect(bones: list[Bone], p: ParameterSet) -> list[Bone]:
    """Keep bones whose ellipse aspect ratio reaches the straightness cutoff.

    Bones with a zero minor axis are perfectly straight and always kept.
    """
    return [b for b in bones if b.ellipse.aspect >= p.ellipse_aspect_ratio]
