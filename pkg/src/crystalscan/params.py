"""Detection parameters: the two primary inputs plus 13 tunable knobs.

The two primary parameters (``dspace_nm``, ``pix_2_nm``) describe the material
and the imaging calibration and are supplied by the user.  The 13 secondary
parameters steer individual pipeline stages.  Parameters whose effect should
scale with the fringe spacing are expressed as proportionality constants and
are multiplied by ``dspace_px`` before use.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields

logger = logging.getLogger(__name__)

# Tunable search ranges: name -> (lower, upper, is_integer).
TUNABLE_RANGES: dict[str, tuple[float, float, bool]] = {
    "blur_iteration": (5, 20, True),
    "blur_kernel_propCons": (0.1, 0.5, False),
    "closing_k_size": (1, 20, True),
    "opening_k_size": (1, 20, True),
    "pixThresh_propCons": (0.0, 1.0, False),
    "ellipse_len_propCons": (0.5, 5.0, False),
    "ellipse_aspect_ratio": (2.0, 7.0, False),
    "thresh_dist_propCons": (1.0, 5.0, False),
    "thresh_theta": (5.0, 15.0, False),
    "cluster_size": (1, 10, True),
    "dspace_bandpass": (0.1, 0.5, False),
    "powSpec_peak_thresh": (1.0, 1.5, False),
    "thresh_area_factor": (1.0, 5.0, False),
}

# Tuned values used as defaults when a config file omits a knob.
OPTIMIZED_TUNABLES: dict[str, float] = {
    "blur_iteration": 20,
    "blur_kernel_propCons": 0.12,
    "closing_k_size": 2,
    "opening_k_size": 2,
    "pixThresh_propCons": 0.74,
    "ellipse_len_propCons": 4.03,
    "ellipse_aspect_ratio": 4.38,
    "thresh_dist_propCons": 1.36,
    "thresh_theta": 13.96,
    "cluster_size": 9,
    "dspace_bandpass": 0.44,
    "powSpec_peak_thresh": 1.00,
    "thresh_area_factor": 2.79,
}

# Hand-picked baseline values, kept for comparison runs.
MANUAL_TUNABLES: dict[str, float] = {
    "blur_iteration": 15,
    "blur_kernel_propCons": 0.15,
    "closing_k_size": 15,
    "opening_k_size": 17,
    "pixThresh_propCons": 0.63,
    "ellipse_len_propCons": 1.50,
    "ellipse_aspect_ratio": 5.00,
    "thresh_dist_propCons": 2.00,
    "thresh_theta": 10.00,
    "cluster_size": 7,
    "dspace_bandpass": 0.20,
    "powSpec_peak_thresh": 1.15,
    "thresh_area_factor": 4.00,
}


@dataclass(frozen=True)
class ParameterSet:
    """Full parameter vector for one detection run.

    ``dspace_nm`` and ``pix_2_nm`` are the primary user inputs; everything
    else is a tunable secondary parameter.  ``*_propCons`` values are
    dimensionless multipliers of ``dspace_px``.
    """

    dspace_nm: float
    pix_2_nm: float
    blur_iteration: int = 20
    blur_kernel_propCons: float = 0.12
    closing_k_size: int = 2
    opening_k_size: int = 2
    pixThresh_propCons: float = 0.74
    ellipse_len_propCons: float = 4.03
    ellipse_aspect_ratio: float = 4.38
    thresh_dist_propCons: float = 1.36
    thresh_theta: float = 13.96
    cluster_size: int = 9
    dspace_bandpass: float = 0.44
    powSpec_peak_thresh: float = 1.00
    thresh_area_factor: float = 2.79

    def __post_init__(self) -> None:
        if not self.dspace_nm > 0:
            raise ValueError(f"dspace_nm must be > 0, got {self.dspace_nm}")
        if not self.pix_2_nm > 0:
            raise ValueError(f"pix_2_nm must be > 0, got {self.pix_2_nm}")
        for name in self.out_of_range():
            lo, hi, _ = TUNABLE_RANGES[name]
            logger.warning(
                "parameter %s=%s outside search range [%s, %s]",
                name, getattr(self, name), lo, hi,
            )

    @property
    def dspace_px(self) -> float:
        """Nominal fringe spacing in pixels."""
        return self.dspace_nm * self.pix_2_nm

    @property
    def blur_kernel_px(self) -> int:
        """Blur kernel side: nearest odd integer to blur_kernel_propCons * dspace_px."""
        return nearest_odd(self.blur_kernel_propCons * self.dspace_px)

    @property
    def backbone_min_px(self) -> float:
        """Minimum backbone length in pixels."""
        return self.pixThresh_propCons * self.dspace_px

    @property
    def bone_length_px(self) -> int:
        """Uniform bone length in pixels."""
        return round(self.ellipse_len_propCons * self.dspace_px)

    @property
    def adjacency_dist_px(self) -> float:
        """Maximum center distance for two bones to be adjacent."""
        return self.thresh_dist_propCons * self.dspace_px

    @property
    def min_cluster_area_px2(self) -> float:
        """Minimum convex-hull area for a cluster to count as a crystal."""
        return self.thresh_area_factor * self.dspace_px**2

    def out_of_range(self) -> list[str]:
        """Names of tunables lying outside their search range."""
        flagged = []
        for name, (lo, hi, _) in TUNABLE_RANGES.items():
            v = getattr(self, name)
            if not lo <= v <= hi:
                flagged.append(name)
        return flagged

    def to_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def replace(self, **kwargs) -> "ParameterSet":
        d = self.to_dict()
        d.update(kwargs)
        return ParameterSet(**d)


def nearest_odd(x: float) -> int:
    """Nearest odd integer to ``x``, clamped to >= 1."""
    lo = 2 * math.floor((x - 1) / 2) + 1  # largest odd <= x
    hi = lo + 2
    k = lo if (x - lo) <= (hi - x) else hi
    return max(k, 1)


def default_parameters(dspace_nm: float, pix_2_nm: float,
                       manual: bool = False) -> ParameterSet:
    """ParameterSet with the tuned (or manual baseline) secondary values."""
    tunables = MANUAL_TUNABLES if manual else OPTIMIZED_TUNABLES
    return ParameterSet(dspace_nm=dspace_nm, pix_2_nm=pix_2_nm, **tunables)
