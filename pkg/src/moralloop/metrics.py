"""Evaluation metrics and multi-run aggregation.

Predictions are probabilities of saving the left side; labels are booleans
(True = left side saved). The decision rule for accuracy predicts left at
p >= 0.5, so exact ties go to the left side by convention.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from .errors import ValidationError

METRIC_FIELDS = ("accuracy", "auc", "normalized_aic", "cross_entropy")


@dataclass(frozen=True)
class EvalReport:
    """Held-out performance of one model on one split."""

    model_id: str
    accuracy: float
    auc: float
    normalized_aic: float
    cross_entropy: float
    n: int
    k: int


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    sem: float


@dataclass(frozen=True)
class RunSummary:
    """Per-metric mean and standard error over replicate runs."""

    model_id: str
    accuracy: MetricSummary
    auc: MetricSummary
    normalized_aic: MetricSummary
    cross_entropy: MetricSummary
    replicate_count: int


def _as_arrays(preds, labels):
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise ValidationError(f"predictions and labels must be equal-length vectors, got {preds.shape} vs {labels.shape}")
    if len(preds) == 0:
        raise ValidationError("empty prediction vector")
    return preds, labels


def accuracy(preds, labels) -> float:
    """Fraction of rows where (p >= 0.5 predicts left) matches the label."""
    preds, labels = _as_arrays(preds, labels)
    return float(((preds >= 0.5) == labels).mean())


def _midranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties sharing the mean of their rank range."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    n = len(values)
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc(preds, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney U statistic.

    Uses midranks, so tied predictions contribute one half; requires both
    classes to be present.
    """
    preds, labels = _as_arrays(preds, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("AUC is undefined when only one class is present")
    ranks = _midranks(preds)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def normalized_aic(log_lik: float, k: int, n: int) -> float:
    """Per-observation Akaike information criterion: (2k - 2 lnL) / n.

    By package convention this is evaluated with the held-out log-likelihood,
    so it is comparable across models with very different k at the same n.
    """
    if n < 1 or k < 1:
        raise ValidationError("n and k must be positive")
    return (2.0 * k - 2.0 * log_lik) / n


def cross_entropy(preds, labels) -> float:
    """Mean per-row negative log-likelihood in nats.

    Probabilities are clipped away from 0/1 at float-epsilon scale so rows
    a model got confidently wrong stay finite.
    """
    preds, labels = _as_arrays(preds, labels)
    eps = np.finfo(np.float64).eps
    p = np.clip(preds, eps, 1.0 - eps)
    return float(-(np.where(labels, np.log(p), np.log1p(-p))).mean())


def evaluate(model_id: str, preds, labels, k: int) -> EvalReport:
    """Bundle the four standard metrics into one report."""
    preds, labels = _as_arrays(preds, labels)
    ce = cross_entropy(preds, labels)
    return EvalReport(
        model_id=model_id,
        accuracy=accuracy(preds, labels),
        auc=auc(preds, labels),
        normalized_aic=normalized_aic(-ce * len(preds), k, len(preds)),
        cross_entropy=ce,
        n=len(preds),
        k=k,
    )


def summarize_runs(reports: Sequence[EvalReport]) -> RunSummary:
    """Mean and standard error of each metric over replicate reports."""
    if len(reports) < 2:
        raise ValidationError("need at least 2 replicates to form a standard error")
    model_ids = {r.model_id for r in reports}
    if len(model_ids) != 1:
        raise ValidationError(f"reports mix models: {sorted(model_ids)}")
    summaries = {}
    for name in METRIC_FIELDS:
        values = np.array([getattr(r, name) for r in reports], dtype=np.float64)
        sem = float(values.std(ddof=1) / np.sqrt(len(values)))
        summaries[name] = MetricSummary(mean=float(values.mean()), sem=sem)
    return RunSummary(
        model_id=reports[0].model_id,
        replicate_count=len(reports),
        **summaries,
    )


def report_fields(report: EvalReport) -> dict:
    return {f.name: getattr(report, f.name) for f in fields(report)}
