"""Orchestration: comparisons, learning curves, and the refinement loop."""

import pytest

from moralloop import choicemodel
from moralloop.choicemodel import expanded_spec, log_likelihood, utilitarian_spec
from moralloop.errors import ValidationError
from moralloop.features import FeatureContext, default_type_principles, parse_principle
from moralloop.harness import (
    build_manifest,
    run_comparison,
    run_learning_curve,
    run_loop_iteration,
)
from moralloop.ingest import SplitConfig, split, subsample
from moralloop.neuralnet import MlpArch, TrainConfig


@pytest.fixture(scope="module")
def typed_parts(typed_100k):
    sub = subsample(typed_100k, 20_000, 1, "harness")
    return split(sub, SplitConfig(seed=2), 0)


FAST_NN = TrainConfig(epochs=5, seed=3)


class TestComparison:
    def test_single_model_single_row(self, typed_parts):
        train_part, test_part = typed_parts
        reports = run_comparison(train_part, test_part, [expanded_spec()], nn_arch=None)
        assert len(reports) == 1
        assert reports[0].model_id == "expanded"
        assert reports[0].n == len(test_part)

    def test_network_row_appended(self, typed_parts):
        train_part, test_part = typed_parts
        reports = run_comparison(train_part, test_part, [expanded_spec()], MlpArch(), nn_cfg=FAST_NN)
        assert [r.model_id for r in reports] == ["expanded", "nn"]
        assert reports[1].k == 3521

    def test_rerun_is_identical(self, typed_parts):
        train_part, test_part = typed_parts
        first = run_comparison(train_part, test_part, [utilitarian_spec()], MlpArch(), seed=9, nn_cfg=FAST_NN)
        second = run_comparison(train_part, test_part, [utilitarian_spec()], MlpArch(), seed=9, nn_cfg=FAST_NN)
        assert first == second


class TestLearningCurve:
    def test_single_size_point_carries_sems(self, typed_100k):
        points = run_learning_curve(
            subsample(typed_100k, 2_000, 7, "curve-test"),
            sizes=[100],
            cm_specs=[choicemodel.equal_weight_spec()],
            nn_arch=MlpArch((4,)),
            replicates=5,
            seed=1,
            nn_cfg=TrainConfig(epochs=2, seed=0),
        )
        assert len(points) == 1
        point = points[0]
        assert point.dataset_size == 100
        assert set(point.summaries) == {"equal_weight", "nn"}
        summary = point.summaries["equal_weight"]
        assert summary.replicate_count == 5
        assert summary.accuracy.sem >= 0.0

    def test_validation(self, typed_100k):
        small = subsample(typed_100k, 1_000, 8, "curve-val")
        with pytest.raises(ValidationError):
            run_learning_curve(small, [100], [expanded_spec()], None, replicates=1)
        with pytest.raises(ValidationError):
            run_learning_curve(small, [200, 100], [expanded_spec()], None)
        with pytest.raises(ValidationError):
            run_learning_curve(small, [2_000], [expanded_spec()], None)


class TestLoopIteration:
    def test_empty_candidates_change_nothing(self, typed_parts):
        train_part, test_part = typed_parts
        report = run_loop_iteration(
            train_part, test_part, expanded_spec(), MlpArch(), candidates=(), nn_cfg=FAST_NN
        )
        assert report.accepted == []
        assert report.spec_after == report.spec_before
        assert report.reports["cm_after"] == report.reports["cm_before"]

    def test_duplicate_candidate_rejected(self, typed_parts):
        train_part, test_part = typed_parts
        with pytest.raises(ValidationError):
            run_loop_iteration(
                train_part, test_part, expanded_spec(), MlpArch(),
                candidates=[parse_principle("principle intervention: swerve_required")],
                nn_cfg=FAST_NN,
            )

    def test_accepting_features_never_lowers_train_likelihood(self, typed_parts):
        train_part, test_part = typed_parts
        report = run_loop_iteration(
            train_part, test_part, expanded_spec(), MlpArch(),
            candidates=default_type_principles(), min_gain=0.0, nn_cfg=FAST_NN,
        )
        ctx = FeatureContext(train_part.keys)
        before = log_likelihood(choicemodel.fit(report.spec_before, train_part, ctx=ctx), train_part, ctx=ctx)
        after = log_likelihood(report.cm_params_after, train_part, ctx=ctx)
        assert after >= before - 1e-6 * len(train_part)

    def test_gains_reported_per_candidate(self, typed_parts):
        train_part, test_part = typed_parts
        candidates = default_type_principles()[:2]
        report = run_loop_iteration(
            train_part, test_part, expanded_spec(), MlpArch(),
            candidates=candidates, nn_cfg=FAST_NN,
        )
        assert set(report.candidate_gains) == {c.name for c in candidates}

    def test_augmented_network_inputs(self, typed_100k):
        sub = subsample(typed_100k, 2_000, 9, "aug")
        train_part, test_part = split(sub, SplitConfig(seed=3), 0)
        report = run_loop_iteration(
            train_part, test_part, expanded_spec(), MlpArch((8,)),
            candidates=default_type_principles(), min_gain=0.0,
            nn_cfg=TrainConfig(epochs=3, seed=4),
            include_augmented_nn=True,
        )
        assert report.accepted, "expected at least one accepted type feature"
        assert "nn_augmented" in report.reports
        expected_inputs = 42 + 2 * len(report.accepted)
        assert report.reports["nn_augmented"].k == MlpArch((8,), n_inputs=expected_inputs).param_count()

    def test_augmented_network_helps_at_small_n(self, typed_100k):
        # with the teacher's own type indicators appended as inputs, the
        # network no longer has to discover them from 1,600 rows
        sub = subsample(typed_100k, 2_000, 11, "aug-gain")
        train_part, test_part = split(sub, SplitConfig(seed=5), 0)
        report = run_loop_iteration(
            train_part, test_part, expanded_spec(), MlpArch(),
            candidates=default_type_principles(), min_gain=0.0,
            nn_cfg=TrainConfig(epochs=30, seed=6),
            include_augmented_nn=True,
        )
        assert report.accepted
        assert report.reports["nn_augmented"].accuracy >= report.reports["nn"].accuracy


class TestManifest:
    def test_contains_reproducibility_fields(self):
        manifest = build_manifest(seed=7, configs={"design": {"a": 1}}, n=100)
        assert manifest["seed"] == 7
        assert manifest["rng"] == "philox4x64"
        assert manifest["package"].startswith("moralloop ")
        assert "design" in manifest["config_hashes"]
        assert manifest["n"] == 100
