"""Tune the detection parameters against annotated synthetic images.

Builds a small training set with ground-truth outlines, runs the
GP/expected-improvement loop for 15 evaluations, and plots the running
minimum of the negative mean IoU.

Run:
    python demos/demo_tuning.py            (about half a minute)
"""
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from crystalscan import bayesopt, imaging, pipeline, synth

OUT = Path(__file__).parent / "output" / "tuning"
OUT.mkdir(parents=True, exist_ok=True)

PIX_2_NM = 32 / 1.9  # 32 px fringes on small 512 px frames keep this quick

with tempfile.TemporaryDirectory() as td:
    synth.write_dataset(td, count=3, size=512, period_px=32.0,
                        noise_sigma=7.0, seed=11, pix_2_nm=PIX_2_NM)
    annotations = pipeline.load_annotations(Path(td) / "annotations.json")
    training = []
    for path in pipeline.list_input_images(Path(td)):
        img = imaging.load_grayscale(path, PIX_2_NM)
        truth = pipeline.rasterize_annotations(annotations[path.name],
                                               img.pixels.shape)
        training.append(bayesopt.TrainingImage(name=path.name, image=img,
                                               truth=truth))

space = bayesopt.tunable_search_space()
print(f"search space: {space.d} dimensions")


def objective(values):
    return bayesopt.objective(values, training, dspace_nm=1.9,
                              pix_2_nm=PIX_2_NM)


def progress(trace):
    i = len(trace.y)
    tag = "init" if i <= 10 else "  bo"
    print(f"{tag} eval {i:2d}: IoU {-trace.y[-1]:.4f} "
          f"(best {-trace.running_min[-1]:.4f})")


trace = bayesopt.optimize(space, objective, budget=15, n_init=10, seed=0,
                          callback=progress)

print(f"\nbest mean IoU {-trace.best_value:.4f} with:")
for name, value in trace.best_params.items():
    print(f"  {name:24s} {value}")

fig, ax = plt.subplots(figsize=(7, 4))
ax.plot(range(1, len(trace.y) + 1), trace.running_min, marker="o")
ax.axvline(10.5, color="gray", linestyle=":", label="end of random init")
ax.set_xlabel("Evaluation")
ax.set_ylabel("Running minimum of -mean IoU")
ax.legend()
fig.tight_layout()
fig.savefig(OUT / "convergence.png")
print(f"\nconvergence plot written to {OUT / 'convergence.png'}")
