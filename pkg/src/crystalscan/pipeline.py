"""Batch orchestration: config, annotations, per-image runs, and outputs.

A JSON config drives everything.  Images are processed independently by a
worker pool and emitted in filename-sorted order, so results are identical
for any worker count.  Failures are isolated per image.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field, fields as dc_fields
from multiprocessing import get_context
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.path import Path as MplPath
from PIL import Image

from . import bones as bones_mod
from . import dspacing as dspacing_mod
from . import graph as graph_mod
from . import imaging, skeleton
from .params import ParameterSet, OPTIMIZED_TUNABLES, TUNABLE_RANGES

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {".png", ".tif", ".tiff"}

# Wall-time buckets reported per image, in pipeline order.
STAGE_LABELS = [
    "Blurring + Hist Eq + Thresholding",
    "Skeletonization",
    "Breaking Branches",
    "Segmentation",
    "Uniform Breaking",
    "Ellipse Construction",
    "Adjacency Matrix",
    "Connected Component",
    "d-Spacing Evaluation",
]

CRYSTALS_HEADER = ["Name", "CentroidX", "CentroidY", "Area_nm2", "Angle_deg",
                   "dSpacing_nm", "MajorAxis_nm", "MinorAxis_nm", "AxisAngle_deg"]
CORRELATIONS_HEADER = ["Name", "MetricDistance", "DirectDistance_nm",
                       "RelativeAngle_deg"]


class ConfigError(ValueError):
    """Bad run configuration (maps to CLI exit code 2)."""


@dataclass(frozen=True)
class RunConfig:
    """Validated detection-run settings."""

    input_dir: Path
    output_dir: Path
    params: ParameterSet
    annotation_path: Path | None = None
    worker_count: int = 1
    debug: bool = False
    seed: int = 0
    metric_cap: float = 3.0
    hann_window: bool = False


_CONFIG_KEYS = {
    "input_dir": str, "output_dir": str, "annotation_path": str,
    "worker_count": int, "debug": bool, "seed": int,
    "metric_cap": float, "hann_window": bool,
}
_INT_PARAMS = {name for name, (_, _, is_int) in TUNABLE_RANGES.items() if is_int}


def parse_config(path: str | Path) -> RunConfig:
    """Parse and validate a JSON run config.

    ``input_dir``, ``output_dir``, ``dspace_nm`` and ``pix_2_nm`` are
    required; omitted tunables fall back to the optimized defaults.
    Unknown keys and type mismatches are errors.
    """
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")

    param_names = {f.name for f in dc_fields(ParameterSet)}
    unknown = set(raw) - set(_CONFIG_KEYS) - param_names
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("input_dir", "output_dir", "dspace_nm", "pix_2_nm"):
        if key not in raw:
            raise ConfigError(f"missing required config key: {key}")

    param_values = {}
    for name in param_names:
        if name not in raw:
            continue
        v = raw[name]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"parameter {name} must be a number, got {v!r}")
        if name in _INT_PARAMS:
            if v != int(v):
                raise ConfigError(f"parameter {name} must be an integer, got {v!r}")
            v = int(v)
        param_values[name] = v
    for name, default in OPTIMIZED_TUNABLES.items():
        param_values.setdefault(name, default)
    try:
        params = ParameterSet(**param_values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    extras = {}
    for key, typ in _CONFIG_KEYS.items():
        if key not in raw or key in ("input_dir", "output_dir"):
            continue
        v = raw[key]
        if typ is bool and not isinstance(v, bool):
            raise ConfigError(f"config key {key} must be a boolean, got {v!r}")
        if typ is int and (isinstance(v, bool) or not isinstance(v, int)):
            raise ConfigError(f"config key {key} must be an integer, got {v!r}")
        if typ is float and (isinstance(v, bool) or not isinstance(v, (int, float))):
            raise ConfigError(f"config key {key} must be a number, got {v!r}")
        if typ is str and not isinstance(v, str):
            raise ConfigError(f"config key {key} must be a string, got {v!r}")
        extras[key] = Path(v) if key == "annotation_path" else typ(v)

    if extras.get("worker_count", 1) < 1:
        raise ConfigError("worker_count must be >= 1")
    return RunConfig(input_dir=Path(raw["input_dir"]),
                     output_dir=Path(raw["output_dir"]),
                     params=params, **extras)


# --------------------------------------------------------------------------
# Annotations (VGG-annotator polygon JSON)
# --------------------------------------------------------------------------

def load_annotations(path: str | Path) -> dict[str, list[np.ndarray]]:
    """Read polygon annotations: image name -> list of (k, 2) (row, col) arrays.

    Accepts the VGG annotator region format: a mapping whose entries carry
    ``filename`` and ``regions`` with polygon ``all_points_x/y`` arrays.
    """
    with open(path) as fh:
        raw = json.load(fh)
    if "_via_img_metadata" in raw:  # full VIA project export
        raw = raw["_via_img_metadata"]
    out: dict[str, list[np.ndarray]] = {}
    for key, entry in raw.items():
        if not isinstance(entry, dict):
            raise ValueError(f"malformed annotation entry for {key!r}")
        name = entry.get("filename", key)
        regions = entry.get("regions", [])
        if isinstance(regions, dict):  # older VIA exports index regions by id
            regions = [regions[k] for k in sorted(regions)]
        polys = []
        for region in regions:
            shape = region.get("shape_attributes", {})
            if shape.get("name") not in (None, "polygon", "polyline"):
                continue
            xs = shape.get("all_points_x")
            ys = shape.get("all_points_y")
            if xs is None or ys is None or len(xs) != len(ys) or len(xs) < 3:
                raise ValueError(f"malformed polygon for image {name!r}")
            polys.append(np.column_stack([ys, xs]).astype(np.float64))
        out[name] = polys
    return out


def rasterize_annotations(polygons: list[np.ndarray],
                          dims: tuple[int, int]) -> np.ndarray:
    """Even-odd fill of each polygon, unioned into one boolean mask.

    Polygon vertices are (row, col); parts outside the frame are clipped
    with a warning.
    """
    h, w = dims
    mask = np.zeros(dims, dtype=bool)
    for poly in polygons:
        poly = np.asarray(poly, dtype=np.float64)
        if len(poly) < 3:
            raise ValueError("polygon needs >= 3 vertices")
        if (poly[:, 0].min() < -0.5 or poly[:, 1].min() < -0.5
                or poly[:, 0].max() > h - 0.5 or poly[:, 1].max() > w - 0.5):
            logger.warning("annotation polygon extends outside the image; clipping")
        r0 = max(int(np.floor(poly[:, 0].min())), 0)
        r1 = min(int(np.ceil(poly[:, 0].max())) + 1, h)
        c0 = max(int(np.floor(poly[:, 1].min())), 0)
        c1 = min(int(np.ceil(poly[:, 1].max())) + 1, w)
        if r0 >= r1 or c0 >= c1:
            continue
        rr, cc = np.mgrid[r0:r1, c0:c1]
        pts = np.column_stack([cc.ravel(), rr.ravel()])  # path wants (x, y)
        path = MplPath(poly[:, ::-1])
        inside = path.contains_points(pts).reshape(rr.shape)
        mask[r0:r1, c0:c1] |= inside
    return mask


# --------------------------------------------------------------------------
# Per-image processing
# --------------------------------------------------------------------------

@dataclass
class ImageResult:
    """Everything extracted from one micrograph."""

    image_name: str
    crystals: list[graph_mod.CrystalRecord] = field(default_factory=list)
    correlations: list[graph_mod.CorrelationRecord] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    error: str | None = None

    @property
    def total_seconds(self) -> float:
        return sum(self.timings.values())


def detect_regions(img: imaging.GrayImage, p: ParameterSet,
                   timings: dict[str, float] | None = None,
                   debug: "DebugDump | None" = None) -> list[graph_mod.CrystalRegion]:
    """Run the detection chain up to segmented crystal regions."""
    t = _StageTimer(timings)

    with t("Blurring + Hist Eq + Thresholding"):
        mask = imaging.preprocess(img, p)
    if debug:
        debug.save_mask("1_binary", mask.bits)

    with t("Skeletonization"):
        sk = skeleton.skeletonize(mask)

    with t("Breaking Branches"):
        backbones = skeleton.break_branches(sk)
    if debug:
        debug.save_mask("2_skeleton_branched", _paint_chains(
            [b.pixels for b in backbones], img.pixels.shape) > 0)

    with t("Segmentation"):
        backbones = skeleton.filter_short_backbones(backbones, p)

    with t("Uniform Breaking"):
        bone_list = skeleton.break_uniform(backbones, p)
    if debug:
        debug.save_labels("3_bones", _paint_chains(
            [b.pixels for b in bone_list], img.pixels.shape))

    with t("Ellipse Construction"):
        bone_list = bones_mod.fit_bone_ellipses(bone_list)
        bone_list = bones_mod.filter_aspect(bone_list, p)
    if debug:
        debug.save_labels("4_bones_aspect_filtered", _paint_chains(
            [b.pixels for b in bone_list], img.pixels.shape))

    with t("Adjacency Matrix"):
        g = graph_mod.build_adjacency(bone_list, p)

    with t("Connected Component"):
        clusters = graph_mod.connected_components(g)
        clusters = graph_mod.filter_clusters(clusters, bone_list, p)

    with t("Segmentation"):
        regions = [graph_mod.region_of(c, bone_list, p, img.pixels.shape)
                   for c in clusters]
    if debug:
        labels = np.zeros(img.pixels.shape, dtype=np.int32)
        for i, region in enumerate(regions):
            labels[region.mask] = i + 1
        debug.save_labels("5_clusters", labels)
    return regions


def process_image(img: imaging.GrayImage, p: ParameterSet, image_name: str = "",
                  metric_cap: float = 3.0, hann_window: bool = False,
                  debug_dir: str | Path | None = None,
                  overlay_path: str | Path | None = None) -> ImageResult:
    """Full analysis of one micrograph; failures yield an error result."""
    result = ImageResult(image_name=image_name,
                         timings={label: 0.0 for label in STAGE_LABELS})
    debug = DebugDump(Path(debug_dir), image_name) if debug_dir else None
    try:
        regions = detect_regions(img, p, result.timings, debug)
        t = _StageTimer(result.timings)
        records = []
        for i, region in enumerate(regions):
            with t("d-Spacing Evaluation"):
                dsp = dspacing_mod.evaluate_dspacing(region.mask, img, p,
                                                     window=hann_window)
            if debug:
                debug.save_dspacing(i, region.mask, img, p, hann_window)
            with t("Segmentation"):
                records.append(graph_mod.crystal_features(
                    region, dsp, img.pix_2_nm, image_name))
        result.crystals = records
        result.correlations = graph_mod.pair_correlations(
            records, img.pix_2_nm, metric_cap)
        if overlay_path is not None:
            render_overlay(img, regions, records, Path(overlay_path))
    except Exception as exc:  # per-image isolation: batch must continue
        logger.exception("processing failed for %s", image_name)
        result.error = f"{type(exc).__name__}: {exc}"
        result.crystals = []
        result.correlations = []
    return result


class _StageTimer:
    """Accumulates wall time into a shared per-stage dict."""

    def __init__(self, timings: dict[str, float] | None):
        self.timings = timings

    def __call__(self, label: str):
        return _StageContext(self.timings, label)


class _StageContext:
    def __init__(self, timings, label):
        self.timings = timings
        self.label = label

    def __enter__(self):
        self.start = time.perf_counter()

    def __exit__(self, *exc):
        if self.timings is not None:
            self.timings[self.label] = (self.timings.get(self.label, 0.0)
                                        + time.perf_counter() - self.start)
        return False


def _paint_chains(pixel_sets: list[np.ndarray], dims) -> np.ndarray:
    labels = np.zeros(dims, dtype=np.int32)
    for i, pix in enumerate(pixel_sets):
        labels[pix[:, 0], pix[:, 1]] = i + 1
    return labels


class DebugDump:
    """Writes intermediate-stage images for one micrograph."""

    def __init__(self, debug_dir: Path, image_name: str):
        self.dir = debug_dir / Path(image_name).stem
        self.dir.mkdir(parents=True, exist_ok=True)

    def save_mask(self, name: str, bits: np.ndarray) -> None:
        Image.fromarray((bits * np.uint8(255))).save(self.dir / f"{name}.png")

    def save_labels(self, name: str, labels: np.ndarray) -> None:
        if labels.max() > 0:
            cmap = plt.get_cmap("nipy_spectral")
            rgba = cmap((labels % 251 + (labels > 0) * 4) / 255.0)
            rgba[labels == 0] = (0, 0, 0, 1)
            arr = (rgba[..., :3] * 255).astype(np.uint8)
        else:
            arr = np.zeros(labels.shape + (3,), dtype=np.uint8)
        Image.fromarray(arr).save(self.dir / f"{name}.png")

    def save_dspacing(self, index: int, region_mask, img, p, hann) -> None:
        """FFT patch and annotated spectrum for one crystal."""
        top, left, side = dspacing_mod.largest_inscribed_square(region_mask)
        if side < dspacing_mod.MIN_PATCH_SIDE:
            return
        patch = img.pixels[top:top + side, left:left + side]
        Image.fromarray(patch).save(self.dir / f"crystal_{index}_patch.png")
        pad = max(1, min(dspacing_mod.DEFAULT_PAD_FACTOR, 2048 // side))
        spec = dspacing_mod.power_spectrum(patch, pad_factor=pad, window=hann)
        result = dspacing_mod.bandpass_peak(spec, p, side)
        n_padded = spec.shape[0]
        center = n_padded // 2
        r0_px = side / p.dspace_px * n_padded / side

        fig, ax = plt.subplots(figsize=(5, 5))
        ax.imshow(np.log10(spec + spec.max() * 1e-9), cmap="magma")
        for factor in (1 - p.dspace_bandpass, 1 + p.dspace_bandpass):
            ax.add_patch(plt.Circle((center, center), r0_px * factor,
                                    fill=False, color="cyan", linewidth=0.8))
        if result.found:
            r_px = result.peak_radius_cycles * n_padded / side
            angle = np.radians(result.pattern_angle_deg)
            ax.plot(center + r_px * np.cos(angle),
                    center - r_px * np.sin(angle), "g+", markersize=12)
            ax.set_title(f"d = {result.d_nm:.2f} nm, "
                         f"ratio = {result.peak_power_ratio:.2f}")
        else:
            ax.set_title(f"no peak (ratio = {result.peak_power_ratio:.2f})")
        ax.axis("off")
        fig.savefig(self.dir / f"crystal_{index}_spectrum.png",
                    bbox_inches="tight")
        plt.close(fig)


def render_overlay(img: imaging.GrayImage, regions, records,
                   out_path: Path) -> None:
    """Draw hull boundaries, shaded alpha shapes, and orientation lines."""
    h, w = img.pixels.shape
    fig, ax = plt.subplots(figsize=(w / 200, h / 200), dpi=200)
    ax.imshow(img.pixels, cmap="gray", vmin=0, vmax=255)
    shade = np.zeros((h, w, 4))
    for region in regions:
        shade[region.mask] = (1.0, 0.45, 0.0, 0.35)
        hull = np.vstack([region.hull_vertices, region.hull_vertices[:1]])
        ax.plot(hull[:, 1], hull[:, 0], color="lime", linewidth=1.2)
    ax.imshow(shade)
    for record in records:
        r, c = record.centroid_rc
        angle = record.pattern_angle_deg
        if angle is None:
            continue
        # the stored angle is the fringe normal; draw along the fringes
        line = np.radians(angle + 90.0)
        length = 0.5 * np.sqrt(record.area_nm2) * img.pix_2_nm
        dx = np.cos(line) * length / 2
        dy = -np.sin(line) * length / 2
        ax.plot([c - dx, c + dx], [r - dy, r + dy], color="red", linewidth=1.2)
    ax.set_xlim(0, w)
    ax.set_ylim(h, 0)
    ax.axis("off")
    fig.savefig(out_path, bbox_inches="tight", pad_inches=0)
    plt.close(fig)


# --------------------------------------------------------------------------
# Batch processing
# --------------------------------------------------------------------------

def list_input_images(input_dir: Path) -> list[Path]:
    paths = sorted(p for p in Path(input_dir).iterdir()
                   if p.suffix.lower() in IMAGE_EXTENSIONS)
    if not paths:
        raise ConfigError(f"no input images (.png/.tif/.tiff) in {input_dir}")
    return paths


def _process_path(args: tuple[Path, RunConfig]) -> ImageResult:
    path, cfg = args
    try:
        img = imaging.load_grayscale(path, cfg.params.pix_2_nm)
    except Exception as exc:
        logger.error("could not load %s: %s", path, exc)
        return ImageResult(image_name=path.name, error=f"load failed: {exc}",
                           timings={label: 0.0 for label in STAGE_LABELS})
    overlay_dir = cfg.output_dir / "overlays"
    overlay_dir.mkdir(parents=True, exist_ok=True)
    return process_image(
        img, cfg.params, image_name=path.name, metric_cap=cfg.metric_cap,
        hann_window=cfg.hann_window,
        debug_dir=cfg.output_dir / "debug" if cfg.debug else None,
        overlay_path=overlay_dir / f"{path.stem}_overlay.png")


def process_batch(cfg: RunConfig) -> list[ImageResult]:
    """Process every image in the input directory and write all outputs.

    Results come back in filename-sorted order for any worker count.
    """
    paths = list_input_images(cfg.input_dir)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(p, cfg) for p in paths]
    if cfg.worker_count == 1:
        results = [_process_path(job) for job in jobs]
    else:
        ctx = get_context("fork")
        with ctx.Pool(processes=cfg.worker_count) as pool:
            results = pool.map(_process_path, jobs)
    write_outputs(results, cfg)
    n_failed = sum(1 for r in results if r.error is not None)
    if n_failed:
        logger.warning("%d of %d images failed", n_failed, len(results))
    return results


def _fmt(value, spec: str) -> str:
    return "" if value is None else format(value, spec)


def write_outputs(results: list[ImageResult], cfg: RunConfig) -> None:
    """Write the crystal, correlation, and timing CSVs plus histograms."""
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "crystals.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CRYSTALS_HEADER)
        for res in results:
            for rec in res.crystals:
                writer.writerow([
                    res.image_name,
                    _fmt(rec.centroid_rc[1], ".1f"),
                    _fmt(rec.centroid_rc[0], ".1f"),
                    _fmt(rec.area_nm2, ".2f"),
                    _fmt(rec.pattern_angle_deg, ".2f"),
                    _fmt(rec.d_spacing_nm, ".3f"),
                    _fmt(rec.major_axis_nm, ".2f"),
                    _fmt(rec.minor_axis_nm, ".2f"),
                    _fmt(rec.axis_angle_deg, ".2f"),
                ])

    with open(out / "correlations.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CORRELATIONS_HEADER)
        for res in results:
            for cor in res.correlations:
                writer.writerow([
                    res.image_name,
                    _fmt(cor.metric_distance, ".3f"),
                    _fmt(cor.direct_distance_nm, ".2f"),
                    _fmt(cor.relative_angle_deg, ".2f"),
                ])

    with open(out / "timings.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["Name", *STAGE_LABELS, "Total", "Error"])
        for res in results:
            writer.writerow([
                res.image_name,
                *(format(res.timings.get(label, 0.0), ".4f")
                  for label in STAGE_LABELS),
                format(res.total_seconds, ".4f"),
                res.error or "",
            ])

    _write_histograms(results, out / "histograms.png")
    validate_outputs(out / "crystals.csv")


def _write_histograms(results: list[ImageResult], path: Path) -> None:
    records = [rec for res in results for rec in res.crystals]
    areas = [r.area_nm2 for r in records]
    dspacings = [r.d_spacing_nm for r in records if r.d_spacing_nm is not None]
    angle_diffs = [graph_mod.angdiff_180(r.pattern_angle_deg, r.axis_angle_deg)
                   for r in records if r.pattern_angle_deg is not None]
    aspects = [r.major_axis_nm / r.minor_axis_nm for r in records
               if r.minor_axis_nm > 0]
    fig, axes = plt.subplots(2, 2, figsize=(10, 8))
    panels = [
        (areas, "Crystal area (nm$^2$)"),
        (dspacings, "d-spacing (nm)"),
        (angle_diffs, "Pattern vs major-axis angle (deg)"),
        (aspects, "Aspect ratio"),
    ]
    for ax, (values, label) in zip(axes.ravel(), panels):
        if values:
            ax.hist(values, bins=30, color="steelblue", edgecolor="black")
        ax.set_xlabel(label)
        ax.set_ylabel("Count")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def validate_outputs(crystals_csv: Path) -> None:
    """Re-read the crystal CSV and check the row invariants."""
    with open(crystals_csv) as fh:
        for i, row in enumerate(csv.DictReader(fh)):
            major = float(row["MajorAxis_nm"])
            minor = float(row["MinorAxis_nm"])
            if major < minor:
                raise RuntimeError(f"row {i}: MajorAxis < MinorAxis")
            axis_angle = float(row["AxisAngle_deg"])
            if not -90.0 < axis_angle <= 90.0:
                raise RuntimeError(f"row {i}: AxisAngle_deg out of range")
            if row["Angle_deg"]:
                angle = float(row["Angle_deg"])
                if not -180.0 < angle <= 180.0:
                    raise RuntimeError(f"row {i}: Angle_deg out of range")
            if row["dSpacing_nm"] and not float(row["dSpacing_nm"]) > 0:
                raise RuntimeError(f"row {i}: dSpacing_nm must be positive")
