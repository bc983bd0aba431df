"""Command-line entry points: detect, tune, sufficiency, synth.

Exit codes: 0 success, 1 partial failure (some images failed), 2 bad
configuration or arguments.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bayesopt, imaging, pipeline, sufficiency, synth

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except pipeline.ConfigError as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crystalscan",
        description="Detect crystalline domains in HRTEM micrographs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="run batch crystal detection")
    p.add_argument("--config", required=True, help="JSON run config")
    p.add_argument("--workers", type=int, default=None,
                   help="override worker_count from the config")
    p.add_argument("--debug", action="store_true",
                   help="dump intermediate-stage images")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("tune", help="Bayesian-optimize the 13 parameters")
    p.add_argument("--training-dir", required=True,
                   help="directory of annotated training images")
    p.add_argument("--annotation-dir", required=True,
                   help="VGG-style annotation JSON, or a directory "
                        "containing annotations.json")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--budget", type=int, default=200,
                   help="total objective evaluations")
    p.add_argument("--n-init", type=int, default=10,
                   help="random initial evaluations")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dspace-nm", type=float, default=1.9,
                   help="nominal d-spacing (primary parameter)")
    p.add_argument("--pix-2-nm", type=float, default=78.5,
                   help="pixels per nm (primary parameter)")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("sufficiency",
                       help="Wasserstein data-sufficiency analysis")
    p.add_argument("--input", required=True,
                   help="feature CSV (e.g. crystals.csv)")
    p.add_argument("--column", default="Area_nm2",
                   help="feature column to analyze")
    p.add_argument("--batch-sizes", default="10,21,42,84",
                   help="comma-separated batch sizes")
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--threshold", type=float, default=None,
                   help="stopping threshold in feature units")
    p.add_argument("--consecutive", type=int, default=3,
                   help="sub-threshold increments required to stop")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--plot", action="store_true", help="render curve PNG")
    p.set_defaults(func=cmd_sufficiency)

    p = sub.add_parser("synth", help="generate synthetic fringe images")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--period-px", type=float, default=149.0)
    p.add_argument("--angle-deg", type=float, default=None,
                   help="fringe-normal angle; omit for random per image")
    p.add_argument("--noise", type=float, default=8.0,
                   help="Gaussian noise sigma (intensity levels)")
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--size", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pix-2-nm", type=float, default=78.5)
    p.add_argument("--full", action="store_true",
                   help="fill the whole frame with fringes")
    p.set_defaults(func=cmd_synth)
    return parser


def cmd_detect(args) -> int:
    cfg = pipeline.parse_config(args.config)
    if args.workers is not None:
        if args.workers < 1:
            raise pipeline.ConfigError("--workers must be >= 1")
        cfg = replace(cfg, worker_count=args.workers)
    if args.debug:
        cfg = replace(cfg, debug=True)
    results = pipeline.process_batch(cfg)
    n_crystals = sum(len(r.crystals) for r in results)
    n_failed = sum(1 for r in results if r.error is not None)
    print(f"processed {len(results)} images: {n_crystals} crystals, "
          f"{n_failed} failures -> {cfg.output_dir}")
    return EXIT_PARTIAL if n_failed else EXIT_OK


def _load_training(training_dir: Path, annotation_path: Path,
                   pix_2_nm: float) -> list[bayesopt.TrainingImage]:
    if annotation_path.is_dir():
        annotation_path = annotation_path / "annotations.json"
    annotations = pipeline.load_annotations(annotation_path)
    training = []
    for path in pipeline.list_input_images(training_dir):
        if path.name not in annotations:
            raise pipeline.ConfigError(f"no annotation for image {path.name}")
        img = imaging.load_grayscale(path, pix_2_nm)
        truth = pipeline.rasterize_annotations(annotations[path.name],
                                               img.pixels.shape)
        training.append(bayesopt.TrainingImage(name=path.name, image=img,
                                               truth=truth))
    return training


def cmd_tune(args) -> int:
    if args.budget <= args.n_init:
        raise pipeline.ConfigError("--budget must exceed --n-init")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    training = _load_training(Path(args.training_dir),
                              Path(args.annotation_dir), args.pix_2_nm)
    space = bayesopt.tunable_search_space()

    def fn(values: dict) -> float:
        return bayesopt.objective(values, training, args.dspace_nm,
                                  args.pix_2_nm)

    def report(trace: bayesopt.OptimizationTrace) -> None:
        i = len(trace.y)
        print(f"eval {i:3d}: objective {trace.y[-1]:+.4f} "
              f"(best {trace.running_min[-1]:+.4f})")

    trace = bayesopt.optimize(space, fn, budget=args.budget,
                              n_init=args.n_init, seed=args.seed,
                              callback=report)
    write_trace_csv(trace, out / "trace.csv")
    best = dict(trace.best_params)
    best.update({"dspace_nm": args.dspace_nm, "pix_2_nm": args.pix_2_nm,
                 "input_dir": str(args.training_dir),
                 "output_dir": str(out / "best_run")})
    with open(out / "best_params.json", "w") as fh:
        json.dump(best, fh, indent=2)
    print(f"best objective {trace.best_value:+.4f} "
          f"(mean IoU {-trace.best_value:.4f}) -> {out / 'best_params.json'}")
    return EXIT_OK


def write_trace_csv(trace: bayesopt.OptimizationTrace, path: Path) -> None:
    names = [dim.name for dim in trace.space.dimensions]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", *names, "objective", "running_min"])
        for i, (values, y, rmin) in enumerate(
                zip(trace.params, trace.y, trace.running_min), start=1):
            writer.writerow([i, *(values[n] for n in names),
                             f"{y:.6f}", f"{rmin:.6f}"])


def cmd_sufficiency(args) -> int:
    values = read_feature_column(Path(args.input), args.column)
    batch_sizes = [int(s) for s in args.batch_sizes.split(",") if s.strip()]
    if not batch_sizes:
        raise pipeline.ConfigError("no batch sizes given")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    curves = []
    summary = []
    for b in batch_sizes:
        curve = sufficiency.increment_analysis(values, b, reps=args.reps,
                                               seed=args.seed)
        curves.append(curve)
        removal = sufficiency.full_vs_one_batch_less(values, b, reps=args.reps,
                                                     seed=args.seed)
        entry = {"batch_size": b, "full_vs_one_batch_less": removal}
        line = f"batch {b:4d}: full-vs-one-batch-less W1 = {removal:.4f}"
        if args.threshold is not None:
            decision = sufficiency.stopping_decision(curve, args.threshold,
                                                     args.consecutive)
            entry.update({"threshold": args.threshold,
                          "stop_index": decision.stop_index,
                          "stop_count": decision.stop_count})
            line += (f"; stop at {decision.stop_count} crystals"
                     if decision.should_stop else "; no stop point")
        summary.append(entry)
        print(line)

    with open(out / "sufficiency_curves.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["batch_size", "crystal_count", "mean_w1"])
        for curve in curves:
            for count, w in curve.points:
                writer.writerow([curve.batch_size, count, f"{w:.6f}"])

    with open(out / "decision.json", "w") as fh:
        json.dump(summary, fh, indent=2)

    if args.plot:
        plot_curves(curves, out / "sufficiency_curves.png", args.threshold)
    print(f"wrote {out / 'sufficiency_curves.csv'}")
    return EXIT_OK


def read_feature_column(path: Path, column: str) -> np.ndarray:
    values = []
    with open(path) as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or column not in reader.fieldnames:
            raise pipeline.ConfigError(
                f"column {column!r} not found in {path}")
        for row in reader:
            cell = row[column].strip()
            if cell:
                values.append(float(cell))
    if not values:
        raise pipeline.ConfigError(f"no values in column {column!r} of {path}")
    return np.array(values)


def plot_curves(curves, path: Path, threshold: float | None) -> None:
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 5))
    for curve in curves:
        ax.plot(curve.counts, curve.distances, marker="o", markersize=3,
                label=f"batch = {curve.batch_size}")
    if threshold is not None:
        ax.axhline(threshold, color="gray", linestyle="--", label="threshold")
    ax.set_xlabel("Crystal count")
    ax.set_ylabel("Avg. Wasserstein distance")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def cmd_synth(args) -> int:
    paths = synth.write_dataset(
        out_dir=args.out, count=args.count, size=args.size,
        period_px=args.period_px, angle_deg=args.angle_deg,
        noise_sigma=args.noise, seed=args.seed, pix_2_nm=args.pix_2_nm,
        full=args.full)
    print(f"wrote {len(paths)} images and annotations.json to {args.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
