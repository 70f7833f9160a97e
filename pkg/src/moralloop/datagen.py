"""Synthetic dataset generation from configurable teacher response models.

A design config describes the scenario distribution: a weighted mixture of
six constrained streams (one per problem type, each emitting dilemmas that
detect as that type) plus a free "random" composition stream, together with
group-size and legality settings. A teacher spec is a ground-truth response
model: per-character utilities, optional principle weights, optional
override bonuses (planted interactions to be rediscovered later), and a
temperature that divides the value difference before the logistic draw.

Generation is a pure function of (design, teacher, n, seed). Rows are
produced in shards whose Philox streams are keyed by (seed, "gen", shard),
so a sharded and a serial run emit identical files. The generator name and
config hashes are recorded in the dataset provenance.

The default teacher parameter values shipped in ``configs/`` are arbitrary
demo inputs chosen to make the model-comparison phenomena visible at desk
scale; they are not derived from any dataset.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from . import rng
from .choicemodel import ChoiceModelParams, side_value, sigmoid, utilitarian_spec
from .errors import ValidationError
from .features import FeatureContext, eval_principle, parse_principle
from .ingest import Dataset
from .scenario import (
    Legality,
    ProblemType,
    Response,
    Scenario,
    Side,
    SideComposition,
    Taxonomy,
    active_taxonomy,
    encode,
)

GENERATION_SHARD = 8192

STREAM_NAMES = tuple(t.value for t in ProblemType) + ("random",)

TEACHER_KINDS = ("linear", "typed", "typed_with_overrides")


@dataclass(frozen=True)
class DesignConfig:
    """Scenario sampling distribution."""

    stream_weights: dict
    group_size_range: tuple = (1, 5)
    legality_rates: dict = field(
        default_factory=lambda: {"none": 1 / 3, "left_legal": 1 / 3, "right_legal": 1 / 3}
    )
    seed: int = 0

    def __post_init__(self):
        unknown = set(self.stream_weights) - set(STREAM_NAMES)
        if unknown:
            raise ValidationError(f"unknown streams {sorted(unknown)}; expected {STREAM_NAMES}")
        weights = np.array([self.stream_weights.get(n, 0.0) for n in STREAM_NAMES], dtype=np.float64)
        if (weights < 0).any():
            raise ValidationError("stream weights must be non-negative")
        if weights.sum() <= 0:
            raise ValidationError("at least one stream weight must be positive")
        lo, hi = self.group_size_range
        if not (1 <= lo <= hi <= 5):
            raise ValidationError("group_size_range must satisfy 1 <= lo <= hi <= 5")
        if self.stream_weights.get("more_vs_less", 0.0) > 0 and hi < 2:
            raise ValidationError("the more_vs_less stream needs a maximum group size of at least 2")
        rates = self.legality_rates
        if set(rates) != {"none", "left_legal", "right_legal"}:
            raise ValidationError("legality_rates must name exactly none/left_legal/right_legal")
        total = sum(rates.values())
        if any(v < 0 for v in rates.values()) or abs(total - 1.0) > 1e-9:
            raise ValidationError("legality rates must be non-negative and sum to 1")

    def stream_probs(self) -> np.ndarray:
        weights = np.array([self.stream_weights.get(n, 0.0) for n in STREAM_NAMES], dtype=np.float64)
        return weights / weights.sum()

    def legality_probs(self) -> np.ndarray:
        return np.array(
            [self.legality_rates["none"], self.legality_rates["left_legal"], self.legality_rates["right_legal"]]
        )


@dataclass(frozen=True)
class TeacherSpec:
    """Ground-truth response model standing in for the human population."""

    kind: str
    params: ChoiceModelParams
    overrides: tuple = ()  # (PrincipleSpec, bonus) pairs
    noise_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in TEACHER_KINDS:
            raise ValidationError(f"teacher kind must be one of {TEACHER_KINDS}, got {self.kind!r}")
        if self.noise_scale <= 0:
            raise ValidationError("noise_scale must be positive")
        if self.kind == "linear" and (self.params.spec.principles or self.overrides):
            raise ValidationError("a linear teacher carries no principles or overrides")
        if self.kind == "typed" and self.overrides:
            raise ValidationError("a typed teacher carries no overrides; use typed_with_overrides")


def teacher_left_prob(teacher: TeacherSpec, s: Scenario, taxonomy: Taxonomy = None) -> float:
    """Probability the teacher saves the left side of one scenario."""
    z = side_value(teacher.params, s, Side.LEFT, taxonomy) - side_value(teacher.params, s, Side.RIGHT, taxonomy)
    for principle, bonus in teacher.overrides:
        left = eval_principle(principle, s, Side.LEFT, taxonomy)
        right = eval_principle(principle, s, Side.RIGHT, taxonomy)
        z += bonus * (int(left) - int(right))
    return float(sigmoid(z / teacher.noise_scale))


def teacher_left_prob_matrix(teacher: TeacherSpec, keys_or_ctx) -> np.ndarray:
    """Vectorized teacher probabilities over a key matrix or FeatureContext."""
    ctx = keys_or_ctx if isinstance(keys_or_ctx, FeatureContext) else FeatureContext(np.asarray(keys_or_ctx))
    z = ctx.design_matrix(teacher.params.spec) @ teacher.params.theta
    for principle, bonus in teacher.overrides:
        f_left, f_right = ctx.principle_sides(principle)
        z = z + bonus * (f_left.astype(np.float64) - f_right)
    return sigmoid(z / teacher.noise_scale)


def teacher_entropy(teacher: TeacherSpec, keys_or_ctx) -> float:
    """Mean binary entropy of the teacher's choice distribution (nats).

    This is the cross-entropy floor: no model can score a lower expected
    per-row NLL on data drawn from this teacher over these scenarios.
    """
    p = teacher_left_prob_matrix(teacher, keys_or_ctx)
    p = np.clip(p, 1e-15, 1 - 1e-15)
    return float(-(p * np.log(p) + (1 - p) * np.log(1 - p)).mean())


# ---------------------------------------------------------------------------
# Scenario sampling
# ---------------------------------------------------------------------------


def _counts_of(names: Sequence[str]) -> SideComposition:
    counts: dict[str, int] = {}
    for n in names:
        counts[n] = counts.get(n, 0) + 1
    return SideComposition(counts)


def _sample_group_size(cfg: DesignConfig, gen: np.random.Generator, minimum: int = 1) -> int:
    lo, hi = cfg.group_size_range
    lo = max(lo, minimum)
    return int(gen.integers(lo, hi + 1))


def _sample_sides(stream: str, cfg: DesignConfig, gen: np.random.Generator, tax: Taxonomy):
    """Pole-side and counterpart compositions for a constrained stream, or a
    free pair for the random stream."""
    if stream == "random":
        left = _counts_of(gen.choice(tax.names, size=_sample_group_size(cfg, gen)))
        right = _counts_of(gen.choice(tax.names, size=_sample_group_size(cfg, gen)))
        return left, right
    if stream == ProblemType.HUMANS_VS_ANIMALS.value:
        g = _sample_group_size(cfg, gen)
        pole = _counts_of(gen.choice(tax.human_names, size=g))
        other = _counts_of(gen.choice(tax.animal_names, size=g))
        return pole, other
    if stream == ProblemType.MORE_VS_LESS.value:
        g = _sample_group_size(cfg, gen, minimum=2)
        names = list(gen.choice(tax.names, size=g))
        n_remove = int(gen.integers(1, g))
        kept = list(names)
        for _ in range(n_remove):
            kept.pop(int(gen.integers(len(kept))))
        return _counts_of(names), _counts_of(kept)  # pole side has more
    ptype = ProblemType(stream)
    pairs = tax.counterparts[ptype]
    if not pairs:
        raise ValidationError(f"taxonomy defines no counterpart pairs for {stream}")
    g = _sample_group_size(cfg, gen)
    picks = gen.integers(0, len(pairs), size=g)
    pole = _counts_of([pairs[i][0] for i in picks])
    other = _counts_of([pairs[i][1] for i in picks])
    return pole, other


def sample_scenario(cfg: DesignConfig, gen: np.random.Generator, taxonomy: Taxonomy = None) -> Scenario:
    """Draw one scenario; constrained streams always detect as their type."""
    tax = taxonomy or active_taxonomy()
    stream = STREAM_NAMES[int(gen.choice(len(STREAM_NAMES), p=cfg.stream_probs()))]
    pole_side_comp, other_comp = _sample_sides(stream, cfg, gen, tax)
    if gen.random() < 0.5:
        left, right = pole_side_comp, other_comp
    else:
        left, right = other_comp, pole_side_comp
    heading = Side.LEFT if gen.random() < 0.5 else Side.RIGHT
    legality = (Legality.NONE, Legality.LEFT_LEGAL, Legality.RIGHT_LEGAL)[
        int(gen.choice(3, p=cfg.legality_probs()))
    ]
    return Scenario(left, right, heading, legality)


def simulate_response(teacher: TeacherSpec, s: Scenario, gen: np.random.Generator) -> Response:
    """Draw one saved-side decision from the teacher's choice distribution."""
    p = teacher_left_prob(teacher, s)
    saved = Side.LEFT if gen.random() < p else Side.RIGHT
    return Response(scenario=s, saved=saved)


def generate_dataset(cfg: DesignConfig, teacher: TeacherSpec, n: int, seed: Optional[int] = None) -> Dataset:
    """Generate n responses; reproducible from (cfg, teacher, n, seed)."""
    if n < 1:
        raise ValidationError("n must be at least 1")
    seed = cfg.seed if seed is None else seed
    tax = active_taxonomy()
    key_blocks = []
    saved_blocks = []
    n_shards = (n + GENERATION_SHARD - 1) // GENERATION_SHARD
    for shard in range(n_shards):
        count = min(GENERATION_SHARD, n - shard * GENERATION_SHARD)
        gen = rng.stream(seed, "gen", shard)
        # fixed-size uniform block first, so a partial final shard draws the
        # same scenarios and responses as the corresponding full-shard prefix
        uniforms = gen.random(GENERATION_SHARD)
        keys = np.array(
            [encode(sample_scenario(cfg, gen, tax), tax) for _ in range(count)], dtype=np.int16
        )
        probs = teacher_left_prob_matrix(teacher, keys)
        saved = uniforms[:count] < probs
        key_blocks.append(keys)
        saved_blocks.append(saved)
    keys = np.concatenate(key_blocks)
    saved = np.concatenate(saved_blocks)
    ids = np.array([str(i + 1) for i in range(n)], dtype=object)
    provenance = {
        "generator": "moralloop.datagen",
        "rng": rng.ALGORITHM,
        "seed": int(seed),
        "n": int(n),
        "design_hash": config_hash(design_to_dict(cfg)),
        "teacher_hash": config_hash(teacher_to_dict(teacher)),
    }
    return Dataset(keys, saved, ids, provenance)


# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------


def config_hash(raw: dict) -> str:
    return hashlib.sha256(json.dumps(raw, sort_keys=True).encode()).hexdigest()[:16]


def design_to_dict(cfg: DesignConfig) -> dict:
    return {
        "stream_weights": dict(cfg.stream_weights),
        "group_size_range": list(cfg.group_size_range),
        "legality_rates": dict(cfg.legality_rates),
        "seed": int(cfg.seed),
    }


def design_from_dict(raw: dict) -> DesignConfig:
    return DesignConfig(
        stream_weights=dict(raw["stream_weights"]),
        group_size_range=tuple(raw.get("group_size_range", (1, 5))),
        legality_rates=dict(raw.get("legality_rates", {"none": 1 / 3, "left_legal": 1 / 3, "right_legal": 1 / 3})),
        seed=int(raw.get("seed", 0)),
    )


def teacher_to_dict(teacher: TeacherSpec) -> dict:
    tax = active_taxonomy()
    utilities = {name: float(teacher.params.utilities[teacher.params.spec.tying[name]]) for name in tax.names}
    return {
        "kind": teacher.kind,
        "noise_scale": float(teacher.noise_scale),
        "utilities": utilities,
        "principles": [
            {"source": p.source, "weight": float(w)}
            for p, w in zip(teacher.params.spec.principles, teacher.params.principle_weights)
        ],
        "overrides": [{"source": p.source, "bonus": float(b)} for p, b in teacher.overrides],
    }


def teacher_from_dict(raw: dict) -> TeacherSpec:
    tax = active_taxonomy()
    missing = set(tax.names) - set(raw["utilities"])
    if missing:
        raise ValidationError(f"teacher utilities missing characters {sorted(missing)}")
    principles = [parse_principle(p["source"]) for p in raw.get("principles", [])]
    weights = np.array([p["weight"] for p in raw.get("principles", [])], dtype=np.float64)
    spec = utilitarian_spec().with_principles(principles, name="teacher")
    utilities = np.array([raw["utilities"][n] for n in tax.names], dtype=np.float64)
    params = ChoiceModelParams(spec, utilities, weights)
    overrides = tuple(
        (parse_principle(o["source"]), float(o["bonus"])) for o in raw.get("overrides", [])
    )
    return TeacherSpec(
        kind=raw["kind"],
        params=params,
        overrides=overrides,
        noise_scale=float(raw.get("noise_scale", 1.0)),
    )


def load_design(path) -> DesignConfig:
    with open(path) as fh:
        return design_from_dict(json.load(fh))


def load_teacher(path) -> TeacherSpec:
    with open(path) as fh:
        return teacher_from_dict(json.load(fh))


def _packaged(name: str) -> dict:
    return json.loads(resources.files("moralloop.configs").joinpath(name).read_text())


def packaged_design(name: str) -> DesignConfig:
    """One of the demo design configs shipped with the package."""
    return design_from_dict(_packaged(name))


def packaged_teacher(name: str) -> TeacherSpec:
    """One of the demo teacher configs shipped with the package."""
    return teacher_from_dict(_packaged(name))
