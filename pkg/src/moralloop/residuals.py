"""Per-dilemma residual analysis.

Aggregating responses by distinct dilemma gives each dilemma an empirical
left-save rate; comparing each model's predicted probability against that
rate shows where the black-box network tracks behavior the interpretable
model misses. Records are ranked by the gap (the choice model's absolute
error minus the network's) and grouped into deterministic template clusters
so the manual inspect-and-cluster step becomes mechanical and reproducible.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .choicemodel import ChoiceModelParams, predict_left_prob_matrix
from .errors import ValidationError
from .ingest import Dataset
from .neuralnet import MlpParams, forward
from .scenario import (
    Legality,
    ProblemType,
    Side,
    Taxonomy,
    active_taxonomy,
    detect_problem_type_matrix,
)


@dataclass(frozen=True)
class AggregateRecord:
    """One distinct dilemma with its empirical rate and model predictions."""

    key: tuple
    n_responses: int
    empirical_left_rate: float
    cm_prob: Optional[float] = None
    nn_prob: Optional[float] = None

    @property
    def cm_abs_err(self) -> Optional[float]:
        return None if self.cm_prob is None else abs(self.cm_prob - self.empirical_left_rate)

    @property
    def nn_abs_err(self) -> Optional[float]:
        return None if self.nn_prob is None else abs(self.nn_prob - self.empirical_left_rate)

    @property
    def gap(self) -> Optional[float]:
        if self.cm_prob is None or self.nn_prob is None:
            return None
        return self.cm_abs_err - self.nn_abs_err


@dataclass(frozen=True)
class ResidualCluster:
    """Records sharing a problem-type or structural template signature."""

    signature: str
    members: tuple
    kind: Optional[ProblemType] = None

    @property
    def mean_gap(self) -> float:
        return float(np.mean([r.gap for r in self.members]))


def aggregate(dataset: Dataset) -> list[AggregateRecord]:
    """One record per distinct dilemma, ordered by key; rates only."""
    unique, inverse, counts = np.unique(dataset.keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    left_saves = np.bincount(inverse, weights=dataset.saved_left.astype(np.float64), minlength=len(unique))
    return [
        AggregateRecord(
            key=tuple(int(v) for v in unique[i]),
            n_responses=int(counts[i]),
            empirical_left_rate=float(left_saves[i] / counts[i]),
        )
        for i in range(len(unique))
    ]


PredictFn = Callable[[np.ndarray], np.ndarray]


def _prob_fn(model: Union[ChoiceModelParams, MlpParams, PredictFn]) -> PredictFn:
    if isinstance(model, ChoiceModelParams):
        return lambda keys: predict_left_prob_matrix(model, keys)
    if isinstance(model, MlpParams):
        return lambda keys: forward(model, keys.astype(np.float64))
    if callable(model):
        return model
    raise ValidationError(f"cannot predict with {type(model).__name__}")


def attach_predictions(
    records: Sequence[AggregateRecord],
    cm: Union[ChoiceModelParams, PredictFn],
    nn: Union[MlpParams, PredictFn],
) -> list[AggregateRecord]:
    """Fill per-record model probabilities (and thereby errors and gaps)."""
    if not records:
        return []
    keys = np.array([r.key for r in records], dtype=np.int16)
    cm_probs = _prob_fn(cm)(keys)
    nn_probs = _prob_fn(nn)(keys)
    return [
        replace(r, cm_prob=float(cm_probs[i]), nn_prob=float(nn_probs[i]))
        for i, r in enumerate(records)
    ]


def rank_gaps(records: Sequence[AggregateRecord], min_responses: int = 30) -> list[AggregateRecord]:
    """Well-sampled records sorted by gap descending, ties broken by key."""
    if min_responses < 1:
        raise ValidationError("min_responses must be at least 1")
    kept = [r for r in records if r.n_responses >= min_responses]
    for r in kept:
        if r.gap is None:
            raise ValidationError("records must carry predictions before ranking; run attach_predictions")
    return sorted(kept, key=lambda r: (-r.gap, r.key))


def cluster_by_template(ranked: Sequence[AggregateRecord], taxonomy: Taxonomy = None) -> list[ResidualCluster]:
    """Group records by problem type, falling back to a structural template.

    Typed records cluster by their detected problem type. Untyped records
    share a cluster when they have the same composition-difference pattern,
    legality and car heading. Clusters come back ordered by mean gap.
    """
    if not ranked:
        raise ValidationError("no records to cluster")
    tax = taxonomy or active_taxonomy()
    keys = np.array([r.key for r in ranked], dtype=np.int16)
    codes, _ = detect_problem_type_matrix(keys, tax)
    groups: dict[str, list[AggregateRecord]] = {}
    kinds: dict[str, Optional[ProblemType]] = {}
    types = list(ProblemType)
    for record, code in zip(ranked, codes):
        if code >= 0:
            ptype = types[code]
            signature = ptype.value
            kinds[signature] = ptype
        else:
            signature = _structural_template(record.key, tax)
            kinds[signature] = None
        groups.setdefault(signature, []).append(record)
    clusters = [
        ResidualCluster(signature=sig, members=tuple(members), kind=kinds[sig])
        for sig, members in groups.items()
    ]
    return sorted(clusters, key=lambda c: (-c.mean_gap, c.signature))


def _structural_template(key: tuple, tax: Taxonomy) -> str:
    n = tax.size
    diffs = [
        f"{tax.names[i]}{key[i] - key[n + i]:+d}"
        for i in range(n)
        if key[i] != key[n + i]
    ]
    pattern = ",".join(diffs) if diffs else "balanced"
    heading = "L" if key[-2] == 1 else "R"
    legality = {0: "none", 1: "left_legal", -1: "right_legal"}[int(key[-1])]
    return f"untyped:{pattern}|car={heading}|legality={legality}"


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def describe_side(key: tuple, side: Side, taxonomy: Taxonomy = None) -> str:
    """Human-readable side description, e.g. 'Old Man Crossing Legally'."""
    tax = taxonomy or active_taxonomy()
    offset = 0 if side is Side.LEFT else tax.size
    parts = []
    for i, name in enumerate(tax.names):
        count = int(key[offset + i])
        if count == 1:
            parts.append(tax.by_name[name].display)
        elif count > 1:
            parts.append(f"{count} {tax.by_name[name].display}")
    description = ", ".join(parts)
    legality = Legality.from_sign(key[-1])
    if legality is not Legality.NONE:
        legal_side = Side.LEFT if legality is Legality.LEFT_LEGAL else Side.RIGHT
        description += " Crossing Legally" if side is legal_side else " Crossing Illegally"
    return description


def record_row(record: AggregateRecord, taxonomy: Taxonomy = None) -> str:
    car = "Left" if record.key[-2] == 1 else "Right"
    return (
        f"{describe_side(record.key, Side.LEFT, taxonomy)} | "
        f"{describe_side(record.key, Side.RIGHT, taxonomy)} | "
        f"{car} | {record.empirical_left_rate:.3f} | {record.cm_prob:.3f} | {record.nn_prob:.3f}"
    )


def report_table(cluster: ResidualCluster, top_k: int, taxonomy: Taxonomy = None) -> str:
    """Aligned text block for one cluster's top records (left-save rates)."""
    if top_k < 1:
        raise ValidationError("top_k must be at least 1")
    lines = [
        f"# cluster {cluster.signature}  (members={len(cluster.members)}, mean_gap={cluster.mean_gap:.3f})",
        "Left Side Agents | Right Side Agents | Car Side | Empirical | CM | NN",
    ]
    for record in cluster.members[:top_k]:
        lines.append(record_row(record, taxonomy))
    return "\n".join(lines)


TSV_COLUMNS = (
    "left_side", "right_side", "car_side", "legality", "signature",
    "n_responses", "empirical", "cm", "nn", "cm_abs_err", "nn_abs_err", "gap",
)


def records_to_tsv(records: Sequence[AggregateRecord], taxonomy: Taxonomy = None, signature: str = "") -> str:
    """Machine-readable table of aggregate records (one line per dilemma)."""
    tax = taxonomy or active_taxonomy()
    out = io.StringIO()
    out.write("\t".join(TSV_COLUMNS) + "\n")
    for r in records:
        legality = {0: "none", 1: "left_legal", -1: "right_legal"}[int(r.key[-1])]
        fields = (
            describe_side(r.key, Side.LEFT, tax),
            describe_side(r.key, Side.RIGHT, tax),
            "L" if r.key[-2] == 1 else "R",
            legality,
            signature,
            str(r.n_responses),
            f"{r.empirical_left_rate:.6f}",
            "" if r.cm_prob is None else f"{r.cm_prob:.6f}",
            "" if r.nn_prob is None else f"{r.nn_prob:.6f}",
            "" if r.cm_abs_err is None else f"{r.cm_abs_err:.6f}",
            "" if r.nn_abs_err is None else f"{r.nn_abs_err:.6f}",
            "" if r.gap is None else f"{r.gap:.6f}",
        )
        out.write("\t".join(fields) + "\n")
    return out.getvalue()
