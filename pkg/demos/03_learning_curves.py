"""Learning curves: interpretable models win small, networks win big.

Sweeps dataset sizes with five 80/20 splits per size and plots mean +- 1 SEM
for the expanded choice model and the network. At laboratory scales the
22-parameter choice model is far ahead; past ~1e5 rows the network has seen
enough data to assemble the problem-type features and pulls ahead.

Run: python demos/03_learning_curves.py         (a few minutes)
Writes demo_curves/accuracy.svg (and .csv) next to the repo root.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from moralloop import datagen, run_learning_curve
from moralloop.choicemodel import expanded_spec
from moralloop.neuralnet import MlpArch, TrainConfig

SIZES = [100, 300, 1_000, 3_000, 10_000, 30_000, 100_000, 300_000]

design = datagen.packaged_design("design_default.json")
teacher = datagen.packaged_teacher("teacher_typed.json")
print("generating 300k responses ...")
data = datagen.generate_dataset(design, teacher, max(SIZES), seed=21)

print(f"sweeping sizes {SIZES} with 5 replicates each ...")
points = run_learning_curve(
    data,
    sizes=SIZES,
    cm_specs=[expanded_spec()],
    nn_arch=MlpArch(),
    replicates=5,
    seed=4,
    nn_cfg=TrainConfig(epochs=40),
)

out_dir = Path("demo_curves")
out_dir.mkdir(exist_ok=True)

with open(out_dir / "curve.csv", "w") as fh:
    fh.write("dataset_size,model,accuracy,accuracy_sem\n")
    for point in points:
        for model_id, s in point.summaries.items():
            fh.write(f"{point.dataset_size},{model_id},{s.accuracy.mean:.6f},{s.accuracy.sem:.6f}\n")

fig, ax = plt.subplots(figsize=(5.5, 3.8))
for model_id, label in (("expanded", "expanded choice model"), ("nn", "neural network")):
    means = [p.summaries[model_id].accuracy.mean for p in points]
    sems = [p.summaries[model_id].accuracy.sem for p in points]
    ax.errorbar([p.dataset_size for p in points], means, yerr=sems, marker="o", capsize=2, label=label)
ax.set_xscale("log")
ax.set_xlabel("dataset size")
ax.set_ylabel("test accuracy")
ax.legend()
fig.tight_layout()
fig.savefig(out_dir / "accuracy.svg")
print(f"wrote {out_dir}/accuracy.svg and {out_dir}/curve.csv")

for point in points:
    cm = point.summaries["expanded"].accuracy
    nn = point.summaries["nn"].accuracy
    lead = "CM" if cm.mean > nn.mean else "NN"
    print(f"  n={point.dataset_size:>7d}  CM {cm.mean:.3f}+-{cm.sem:.3f}  NN {nn.mean:.3f}+-{nn.sem:.3f}  [{lead} leads]")
