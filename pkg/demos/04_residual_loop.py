"""Rediscovering a planted principle with the residual loop.

The planted demo teacher behaves like an expanded choice model except for
one hidden interaction: a large bonus for the human side of explicit
humans-vs-animals dilemmas. This script runs one criticize-and-extend
iteration against that data: fit the expanded model and the network,
aggregate per-dilemma save rates, rank the dilemmas where the network beats
the choice model, cluster them by problem type, and let the loop decide
whether formalizing the suspected feature pays for itself on held-out
accuracy.

Run: python demos/04_residual_loop.py           (about two minutes)
"""

from moralloop import datagen, run_loop_iteration
from moralloop.choicemodel import expanded_spec
from moralloop.features import type_pole_principle
from moralloop.ingest import SplitConfig, split
from moralloop.neuralnet import MlpArch, TrainConfig
from moralloop.residuals import report_table
from moralloop.scenario import ProblemType

design = datagen.packaged_design("design_small_groups.json")
teacher = datagen.packaged_teacher("teacher_planted.json")
print("generating 250k responses from the planted teacher ...")
data = datagen.generate_dataset(design, teacher, 250_000, seed=99)
train_part, test_part = split(data, SplitConfig(seed=2), 0)

candidate = type_pole_principle(ProblemType.HUMANS_VS_ANIMALS)
print(f"candidate feature: {candidate.source}\n")

report = run_loop_iteration(
    train_part,
    test_part,
    expanded_spec(),
    MlpArch(),
    candidates=[candidate],
    min_gain=0.002,
    seed=5,
    min_responses=10,
    nn_cfg=TrainConfig(epochs=40, seed=9),
)

print("=== residual clusters with at least 20 well-sampled dilemmas ===\n")
big = [c for c in report.clusters if len(c.members) >= 20]
for cluster in big:
    print(f"  {cluster.signature:24s} members={len(cluster.members):5d} mean gap={cluster.mean_gap:+.4f}")

print("\n=== the top cluster, an aggregate-comparison table (left-side save rates) ===\n")
print(report_table(big[0], top_k=5))

gain = report.candidate_gains[candidate.name]
before = report.reports["cm_before"].accuracy
after = report.reports["cm_after"].accuracy
nn = report.reports["nn"].accuracy
print(f"\nheld-out accuracy: expanded {before:.4f} -> with feature {after:.4f} (network {nn:.4f})")
if report.accepted:
    print(f"the loop accepted {report.accepted[0].name}: +{gain:.4f} accuracy clears the 0.002 gate")
else:
    print(f"the loop rejected the candidate (gain {gain:+.4f})")
