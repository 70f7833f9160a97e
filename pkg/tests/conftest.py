"""Shared fixtures: seeded random scenarios and mid-sized synthetic datasets.

The session fixtures generate data once per test run; module tests that need
realistic response data (network training, harness flows) share them instead
of regenerating.
"""

import numpy as np
import pytest

from moralloop import datagen
from moralloop.scenario import Legality, Scenario, Side, SideComposition, active_taxonomy


def random_scenario(gen: np.random.Generator) -> Scenario:
    """Unconstrained random scenario (both sides free compositions)."""
    tax = active_taxonomy()

    def side():
        size = int(gen.integers(1, 6))
        names = gen.choice(tax.names, size=size)
        counts = {}
        for n in names:
            counts[str(n)] = counts.get(str(n), 0) + 1
        return SideComposition(counts)

    heading = Side.LEFT if gen.random() < 0.5 else Side.RIGHT
    legality = (Legality.NONE, Legality.LEFT_LEGAL, Legality.RIGHT_LEGAL)[int(gen.integers(3))]
    return Scenario(side(), side(), heading, legality)


@pytest.fixture(scope="session")
def typed_100k():
    """Typed-teacher dataset: the full six-stream design at n=100k."""
    design = datagen.packaged_design("design_default.json")
    teacher = datagen.packaged_teacher("teacher_typed.json")
    return datagen.generate_dataset(design, teacher, 100_000, seed=20260801)


@pytest.fixture(scope="session")
def typed_teacher():
    return datagen.packaged_teacher("teacher_typed.json")


@pytest.fixture(scope="session")
def linear_250k():
    """Linear-teacher dataset over the unconstrained random-composition design.

    Sized so the reference network's generalization gap is small relative
    to the entropy-floor tolerance used in the training oracle tests.
    """
    design = datagen.packaged_design("design_random_only.json")
    teacher = datagen.packaged_teacher("teacher_linear.json")
    return datagen.generate_dataset(design, teacher, 250_000, seed=20260802)


@pytest.fixture(scope="session")
def linear_teacher():
    return datagen.packaged_teacher("teacher_linear.json")
