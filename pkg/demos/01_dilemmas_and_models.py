"""Tour of the domain model: dilemmas, encodings, principles, choice rules.

Builds a handful of scenarios by hand, shows the canonical 42-component
encoding and problem-type detection, evaluates principle predicates on each
side, and walks a hand-parameterized choice model through the value
aggregation and logit choice probability.

Run: python demos/01_dilemmas_and_models.py
"""

import numpy as np

from moralloop import (
    Legality,
    Scenario,
    Side,
    SideComposition,
    detect_problem_type,
    encode,
    eval_principle,
    mirror,
    parse_principle,
    predict_left_prob,
    side_value,
)
from moralloop.choicemodel import ChoiceModelParams, expanded_spec

print("=== Scenarios and encodings ===\n")

# A pregnant woman is crossing against the signal on the left; a cat crosses
# legally on the right; the car is heading toward the left group.
dilemma = Scenario(
    left=SideComposition.of("pregnant_woman"),
    right=SideComposition.of("cat"),
    car_heading=Side.LEFT,
    legality=Legality.RIGHT_LEGAL,
)
key = encode(dilemma)
print("pregnant woman (illegal) vs cat (legal), car heading left")
print(f"  42-vector: left counts {key[:20]}")
print(f"             right counts {key[20:40]}")
print(f"             heading {key[40]:+d}, legality {key[41]:+d}")

match = detect_problem_type(dilemma)
print(f"  detected problem type: {match.kind.value}, pole side: {match.pole_side.value}")

mirrored = mirror(dilemma)
print(f"  mirrored: heading {mirrored.car_heading.value}, legality {mirrored.legality.value}")
assert mirror(mirrored) == dilemma

print("\n=== Principles on each side ===\n")

for source in (
    "principle intervention: swerve_required",
    "principle unlawful: crossing_illegal",
    "principle humans_pole: type(humans_vs_animals) & pole(humans)",
):
    principle = parse_principle(source)
    left = eval_principle(principle, dilemma, Side.LEFT)
    right = eval_principle(principle, dilemma, Side.RIGHT)
    print(f"{principle.name:12s} left={left!s:5s} right={right!s:5s}   ({source.split(': ', 1)[1]})")

print("\n=== A hand-parameterized expanded model ===\n")

spec = expanded_spec()
utilities = np.full(20, 0.5)
utilities[spec.tying["pregnant_woman"]] = 1.3
utilities[spec.tying["cat"]] = -0.5
params = ChoiceModelParams(spec, utilities, np.array([-0.8, -1.1]))

v_left = side_value(params, dilemma, Side.LEFT)
v_right = side_value(params, dilemma, Side.RIGHT)
p_left = predict_left_prob(params, dilemma)
print(f"v_left  = {v_left:+.2f}   (utility 1.3, swerve penalty -0.8, unlawful penalty -1.1)")
print(f"v_right = {v_right:+.2f}   (utility -0.5)")
print(f"P(save left) = logistic(v_left - v_right) = {p_left:.3f}")
print("\nthe penalties push the model against the human here; the residual loop")
print("in demo 04 is how that kind of misprediction gets diagnosed and fixed")
