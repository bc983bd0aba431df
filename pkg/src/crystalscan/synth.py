"""Synthetic fringe micrographs with known ground truth.

Produces images containing one elliptical crystal of sinusoidal fringes on
a noisy background, plus the matching ground-truth polygon, for tests,
demos, and tuning experiments.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .imaging import GrayImage


@dataclass(frozen=True)
class SyntheticImage:
    """Generated micrograph plus its ground-truth crystal outline."""

    image: GrayImage
    polygon_rc: np.ndarray  # (k, 2) float ground-truth outline, (row, col)
    period_px: float
    angle_deg: float        # fringe-normal direction


def fringe_image(size: int = 1024, period_px: float = 149.0,
                 angle_deg: float = -60.0, noise_sigma: float = 8.0,
                 seed: int = 0, pix_2_nm: float = 78.5,
                 coverage: float = 0.92, amplitude: float = 55.0,
                 background: float = 128.0, full: bool = False) -> SyntheticImage:
    """One synthetic micrograph with a fringe-filled elliptical crystal.

    ``angle_deg`` is the fringe-normal (wave vector) direction in the
    x-right / y-up screen convention.  ``full=True`` fills the whole frame
    with fringes instead of an ellipse.
    """
    rng = np.random.default_rng(seed)
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    x = cols
    y = -rows
    phi = math.radians(angle_deg)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    fringes = np.cos(2.0 * math.pi * (x * math.cos(phi) + y * math.sin(phi))
                     / period_px + phase)

    if full:
        inside = np.ones((size, size), dtype=bool)
        corners = np.array([[0, 0], [0, size - 1], [size - 1, size - 1],
                            [size - 1, 0]], dtype=np.float64)
        outline = corners
    else:
        cy = cx = (size - 1) / 2.0
        a = coverage * size / 2.0          # semi-axis along columns
        b = 0.82 * coverage * size / 2.0   # semi-axis along rows
        inside = (((cols - cx) / a) ** 2 + ((rows - cy) / b) ** 2) <= 1.0
        t = np.linspace(0.0, 2.0 * math.pi, 64, endpoint=False)
        outline = np.stack([cy + b * np.sin(t), cx + a * np.cos(t)], axis=1)

    img = np.full((size, size), background, dtype=np.float64)
    img[inside] += amplitude * fringes[inside]
    img += rng.normal(0.0, noise_sigma, size=(size, size))
    pixels = np.clip(np.round(img), 0, 255).astype(np.uint8)
    return SyntheticImage(image=GrayImage(pixels=pixels, pix_2_nm=pix_2_nm),
                          polygon_rc=outline, period_px=period_px,
                          angle_deg=angle_deg)


def write_dataset(out_dir: str | Path, count: int = 5, size: int = 1024,
                  period_px: float = 149.0, angle_deg: float | None = None,
                  noise_sigma: float = 8.0, seed: int = 0,
                  pix_2_nm: float = 78.5, full: bool = False) -> list[Path]:
    """Write ``count`` synthetic PNGs plus a VGG-style annotation file.

    With ``angle_deg=None`` each image gets a seeded random orientation.
    Returns the written image paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    annotations: dict[str, dict] = {}
    paths = []
    for i in range(count):
        angle = float(rng.uniform(-180.0, 0.0)) if angle_deg is None else angle_deg
        sample = fringe_image(size=size, period_px=period_px, angle_deg=angle,
                              noise_sigma=noise_sigma, seed=seed + 1000 * i + 1,
                              pix_2_nm=pix_2_nm, full=full)
        name = f"synthetic_{i:03d}.png"
        path = out / name
        Image.fromarray(sample.image.pixels).save(path)
        paths.append(path)
        annotations[name] = {
            "filename": name,
            "regions": [{
                "shape_attributes": {
                    "name": "polygon",
                    "all_points_x": [float(c) for c in sample.polygon_rc[:, 1]],
                    "all_points_y": [float(r) for r in sample.polygon_rc[:, 0]],
                }
            }],
        }
    with open(out / "annotations.json", "w") as fh:
        json.dump(annotations, fh, indent=2)
    return paths
