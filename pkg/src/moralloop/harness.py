"""Experiment orchestration: model comparisons, learning curves, and the
iterative refinement loop.

Each entry point takes explicit seeds and emits enough metadata (config
hashes, derived seeds, generator names) for a byte-identical rerun. The
refinement loop implements the criticize-and-extend cycle: fit the
interpretable model and the network, rank per-dilemma residual clusters,
then re-fit with each candidate principle and keep the ones whose held-out
accuracy gain clears the acceptance threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import rng
from .choicemodel import ChoiceModelParams, ChoiceModelSpec, FitConfig, fit, predict_left_prob_matrix
from .datagen import config_hash
from .errors import ValidationError
from .features import FeatureContext, PrincipleSpec
from .ingest import Dataset, SplitConfig, split, subsample
from .metrics import EvalReport, evaluate, summarize_runs
from .neuralnet import MlpArch, MlpParams, TrainConfig, forward, train
from .residuals import (
    aggregate,
    attach_predictions,
    cluster_by_template,
    rank_gaps,
)

NN_MODEL_ID = "nn"
DEFAULT_REPLICATES = 5
DEFAULT_MIN_GAIN = 0.002


def nn_inputs(dataset: Dataset, extra_columns: Optional[np.ndarray] = None) -> np.ndarray:
    """Raw keys as reals, optionally with appended per-side feature columns."""
    x = dataset.keys.astype(np.float64)
    if extra_columns is not None and extra_columns.shape[1] > 0:
        x = np.hstack([x, extra_columns])
    return x


def _derived_seed(seed: int, *labels) -> int:
    return rng.derive_key(seed, *labels) % (2 ** 63)


def run_comparison(
    train_data: Dataset,
    test_data: Dataset,
    cm_specs: Sequence[ChoiceModelSpec],
    nn_arch: Optional[MlpArch] = MlpArch(),
    seed: int = 0,
    fit_cfg: FitConfig = FitConfig(),
    nn_cfg: Optional[TrainConfig] = None,
) -> list[EvalReport]:
    """Fit every model on the train split and score all on the same test split."""
    train_ctx = FeatureContext(train_data.keys)
    test_ctx = FeatureContext(test_data.keys)
    labels = test_data.saved_left
    reports = []
    for spec in cm_specs:
        params = fit(spec, train_data, fit_cfg, ctx=train_ctx)
        preds = predict_left_prob_matrix(params, test_ctx)
        reports.append(evaluate(spec.name, preds, labels, spec.k))
    if nn_arch is not None:
        cfg = nn_cfg or TrainConfig(seed=_derived_seed(seed, "nn"))
        params = train(nn_arch, nn_inputs(train_data), train_data.saved_left, cfg)
        preds = forward(params, nn_inputs(test_data))
        reports.append(evaluate(NN_MODEL_ID, preds, labels, params.k))
    return reports


@dataclass(frozen=True)
class CurvePoint:
    """Replicate-averaged metrics for every model at one dataset size."""

    dataset_size: int
    summaries: dict  # model_id -> RunSummary


def run_learning_curve(
    data: Dataset,
    sizes: Sequence[int],
    cm_specs: Sequence[ChoiceModelSpec],
    nn_arch: Optional[MlpArch] = MlpArch(),
    replicates: int = DEFAULT_REPLICATES,
    seed: int = 0,
    train_fraction: float = 0.8,
    fit_cfg: FitConfig = FitConfig(),
    nn_cfg: Optional[TrainConfig] = None,
) -> list[CurvePoint]:
    """Metrics as a function of dataset size.

    For each size: draw that many rows, split them train/test, fit and score
    every model; repeat over replicates and report mean with standard error.
    The network batch size follows the dataset-size rule (512 below the
    100k-row threshold) unless a config is built by hand.
    """
    if replicates < 2:
        raise ValidationError("need at least 2 replicates for standard errors")
    if list(sizes) != sorted(set(int(s) for s in sizes)):
        raise ValidationError("sizes must be strictly increasing")
    if max(sizes) > len(data):
        raise ValidationError(f"size {max(sizes)} exceeds the {len(data)} available rows")
    points = []
    for size in sizes:
        per_model: dict[str, list[EvalReport]] = {}
        for rep in range(replicates):
            sub = subsample(data, int(size), seed, "curve", size, rep)
            split_cfg = SplitConfig(train_fraction=train_fraction, seed=_derived_seed(seed, "curve-split", size, rep), replicates=1)
            train_part, test_part = split(sub, split_cfg, 0)
            cell_nn_cfg = None
            if nn_cfg is not None:
                cell_nn_cfg = TrainConfig(
                    batch_size=nn_cfg.batch_size,
                    epochs=nn_cfg.epochs,
                    learning_rate=nn_cfg.learning_rate,
                    seed=_derived_seed(seed, "curve-nn", size, rep),
                    tolerance=nn_cfg.tolerance,
                    val_fraction=nn_cfg.val_fraction,
                    patience=nn_cfg.patience,
                )
            reports = run_comparison(
                train_part,
                test_part,
                cm_specs,
                nn_arch,
                seed=_derived_seed(seed, "curve-nn", size, rep),
                fit_cfg=fit_cfg,
                nn_cfg=cell_nn_cfg,
            )
            for report in reports:
                per_model.setdefault(report.model_id, []).append(report)
        points.append(
            CurvePoint(
                dataset_size=int(size),
                summaries={mid: summarize_runs(reps) for mid, reps in per_model.items()},
            )
        )
    return points


@dataclass
class LoopIterationReport:
    """Everything one criticize-and-extend iteration produced."""

    iteration_index: int
    spec_before: ChoiceModelSpec
    spec_after: ChoiceModelSpec
    reports: dict  # "cm_before", "cm_after", "nn" (+ "nn_augmented") -> EvalReport
    clusters: list  # ResidualCluster, ordered by mean gap
    accepted: list  # PrincipleSpec
    candidate_gains: dict  # candidate name -> held-out accuracy gain when tried
    cm_params_after: ChoiceModelParams = None
    nn_params: MlpParams = None


def run_loop_iteration(
    train_data: Dataset,
    test_data: Dataset,
    cm_spec: ChoiceModelSpec,
    nn_arch: MlpArch = MlpArch(),
    candidates: Sequence[PrincipleSpec] = (),
    min_gain: float = DEFAULT_MIN_GAIN,
    seed: int = 0,
    min_responses: int = 30,
    fit_cfg: FitConfig = FitConfig(),
    nn_cfg: Optional[TrainConfig] = None,
    include_augmented_nn: bool = False,
    iteration_index: int = 0,
) -> LoopIterationReport:
    """One pass of the refinement loop.

    Fits the base choice model and the network, ranks residual clusters on
    the training data, then tries each candidate principle in order: the
    candidate is accepted iff adding it to the current spec raises held-out
    accuracy by at least min_gain. With include_augmented_nn, a second
    network is trained with the accepted features' per-side indicators
    appended to its inputs.
    """
    if min_gain < 0:
        raise ValidationError("min_gain must be non-negative")
    existing = {p.name for p in cm_spec.principles}
    for candidate in candidates:
        if candidate.name in existing:
            raise ValidationError(f"candidate {candidate.name!r} already present in the model spec")

    train_ctx = FeatureContext(train_data.keys)
    test_ctx = FeatureContext(test_data.keys)
    labels = test_data.saved_left

    base_params = fit(cm_spec, train_data, fit_cfg, ctx=train_ctx)
    base_preds = predict_left_prob_matrix(base_params, test_ctx)
    report_before = evaluate(cm_spec.name, base_preds, labels, cm_spec.k)

    cfg = nn_cfg or TrainConfig(seed=_derived_seed(seed, "loop-nn", iteration_index))
    nn_params = train(nn_arch, nn_inputs(train_data), train_data.saved_left, cfg)
    nn_report = evaluate(NN_MODEL_ID, forward(nn_params, nn_inputs(test_data)), labels, nn_params.k)

    records = attach_predictions(aggregate(train_data), base_params, nn_params)
    ranked = rank_gaps(records, min_responses)
    clusters = cluster_by_template(ranked) if ranked else []

    current_spec = cm_spec
    current_params = base_params
    current_accuracy = report_before.accuracy
    accepted: list[PrincipleSpec] = []
    gains: dict[str, float] = {}
    for candidate in candidates:
        trial_spec = current_spec.with_principles([candidate], name=f"{cm_spec.name}_augmented")
        trial_params = fit(trial_spec, train_data, fit_cfg, ctx=train_ctx)
        trial_preds = predict_left_prob_matrix(trial_params, test_ctx)
        trial_accuracy = evaluate(trial_spec.name, trial_preds, labels, trial_spec.k).accuracy
        gain = trial_accuracy - current_accuracy
        gains[candidate.name] = gain
        if gain >= min_gain:
            accepted.append(candidate)
            current_spec = trial_spec
            current_params = trial_params
            current_accuracy = trial_accuracy

    after_preds = predict_left_prob_matrix(current_params, test_ctx)
    report_after = evaluate(current_spec.name, after_preds, labels, current_spec.k)
    reports = {"cm_before": report_before, "cm_after": report_after, "nn": nn_report}

    if include_augmented_nn and accepted:
        arch_aug = MlpArch(hidden_layers=nn_arch.hidden_layers, n_inputs=nn_arch.n_inputs + 2 * len(accepted))
        x_train = nn_inputs(train_data, train_ctx.side_indicator_columns(accepted))
        x_test = nn_inputs(test_data, test_ctx.side_indicator_columns(accepted))
        cfg_aug = TrainConfig(
            batch_size=cfg.batch_size,
            epochs=cfg.epochs,
            learning_rate=cfg.learning_rate,
            seed=_derived_seed(seed, "loop-nn-augmented", iteration_index),
        )
        nn_aug = train(arch_aug, x_train, train_data.saved_left, cfg_aug)
        reports["nn_augmented"] = evaluate(
            "nn_augmented", forward(nn_aug, x_test), labels, nn_aug.k
        )

    return LoopIterationReport(
        iteration_index=iteration_index,
        spec_before=cm_spec,
        spec_after=current_spec,
        reports=reports,
        clusters=clusters,
        accepted=accepted,
        candidate_gains=gains,
        cm_params_after=current_params,
        nn_params=nn_params,
    )


def build_manifest(seed: int, configs: Optional[dict] = None, **extra) -> dict:
    """Reproducibility manifest: seeds, config hashes, versions."""
    from . import __version__

    entry = {
        "package": f"moralloop {__version__}",
        "rng": rng.ALGORITHM,
        "seed": int(seed),
        "config_hashes": {name: config_hash(raw) for name, raw in (configs or {}).items()},
    }
    entry.update(extra)
    return entry
