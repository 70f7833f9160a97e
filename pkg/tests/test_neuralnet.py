"""Network: forward pass, backprop gradients, training, grid search."""

import math

import numpy as np
import pytest

from moralloop import choicemodel, datagen, harness, metrics
from moralloop.errors import ConvergenceError, ValidationError
from moralloop.neuralnet import (
    DEFAULT_GRID,
    MlpArch,
    MlpParams,
    TrainConfig,
    default_batch_size,
    forward,
    grid_search,
    init_params,
    load_network,
    loss_and_gradient,
    save_network,
    train,
)


def zero_net(arch):
    sizes = arch.layer_sizes
    weights = [np.zeros((sizes[i], sizes[i + 1])) for i in range(len(sizes) - 1)]
    biases = [np.zeros(sizes[i + 1]) for i in range(len(sizes) - 1)]
    return MlpParams(arch, weights, biases)


def flatten(grads):
    grad_w, grad_b = grads
    return np.concatenate([g.ravel() for g in grad_w] + [g.ravel() for g in grad_b])


def set_flat(params, vector):
    offset = 0
    for w in params.weights:
        w[...] = vector[offset:offset + w.size].reshape(w.shape)
        offset += w.size
    for b in params.biases:
        b[...] = vector[offset:offset + b.size].reshape(b.shape)
        offset += b.size


def get_flat(params):
    return np.concatenate([w.ravel() for w in params.weights] + [b.ravel() for b in params.biases])


def kink_distance(params, x):
    """Smallest |pre-activation| over all hidden units and rows."""
    smallest = np.inf
    a = x
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        z = a @ w + b
        smallest = min(smallest, float(np.abs(z).min()))
        a = np.maximum(z, 0.0)
    return smallest


class TestArch:
    def test_param_count_by_explicit_enumeration(self):
        arch = MlpArch((32, 32, 32), n_inputs=42)
        manual = 0
        sizes = [42, 32, 32, 32, 1]
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            manual += fan_in * fan_out + fan_out
        assert arch.param_count() == manual == 3521

    def test_widths_validated(self):
        with pytest.raises(ValidationError):
            MlpArch((0,))

    def test_batch_size_rule(self):
        assert default_batch_size(100_000) == 512
        assert default_batch_size(100_001) == 8192


class TestForward:
    def test_zero_network_outputs_half(self):
        params = zero_net(MlpArch())
        gen = np.random.default_rng(1)
        x = gen.integers(0, 4, size=(20, 42)).astype(float)
        assert np.allclose(forward(params, x), 0.5)
        assert forward(params, x[0]) == 0.5

    def test_hand_computed_single_hidden_unit(self):
        arch = MlpArch(hidden_layers=(1,), n_inputs=3)
        params = zero_net(arch)
        params.weights[0][:, 0] = [0.5, -0.3, 0.2]
        params.biases[0][0] = 0.1
        params.weights[1][0, 0] = 2.0
        params.biases[1][0] = -1.0
        x = np.array([1.0, 2.0, 3.0])
        hidden = max(0.0, 0.5 * 1 - 0.3 * 2 + 0.2 * 3 + 0.1)
        expected = 1.0 / (1.0 + math.exp(-(2.0 * hidden - 1.0)))
        assert forward(params, x) == pytest.approx(expected, abs=1e-12)

    def test_relu_gating_in_hand_computation(self):
        arch = MlpArch(hidden_layers=(1,), n_inputs=1)
        params = zero_net(arch)
        params.weights[0][0, 0] = -1.0
        params.weights[1][0, 0] = 5.0
        params.biases[1][0] = 0.25
        # negative pre-activation is clamped to zero, output sees only the bias
        assert forward(params, np.array([3.0])) == pytest.approx(1 / (1 + math.exp(-0.25)), abs=1e-12)

    def test_small_input_perturbation_moves_output_little(self):
        gen = np.random.default_rng(2)
        params = init_params(MlpArch(), seed=5)
        x = gen.integers(0, 4, size=42).astype(float)
        base = forward(params, x)
        x[13] += 1e-9
        assert abs(forward(params, x) - base) < 1e-6

    def test_shape_mismatch_rejected(self):
        params = zero_net(MlpArch())
        with pytest.raises(ValidationError):
            forward(params, np.zeros(41))
        with pytest.raises(ValidationError):
            forward(params, np.zeros((5, 43)))

    def test_layer_shape_chain_validated(self):
        arch = MlpArch((4,), n_inputs=3)
        with pytest.raises(ValidationError):
            MlpParams(arch, [np.zeros((3, 5)), np.zeros((4, 1))], [np.zeros(4), np.zeros(1)])


class TestLossAndGradient:
    def test_confident_correct_predictions_give_near_zero_loss(self):
        arch = MlpArch(hidden_layers=(1,), n_inputs=1)
        params = zero_net(arch)
        params.weights[0][0, 0] = 1.0
        params.weights[1][0, 0] = 30.0
        x = np.array([[1.0], [1.0]])
        y = np.array([1.0, 1.0])
        loss, _ = loss_and_gradient(params, x, y)
        assert loss < 1e-9

    def test_matches_central_finite_differences(self):
        # finite differences are only a valid oracle away from ReLU kinks, so
        # instances whose pre-activations sit within reach of a 1e-5 probe
        # are redrawn
        gen = np.random.default_rng(3)
        step = 1e-5
        checked = 0
        while checked < 5:
            arch = MlpArch(hidden_layers=tuple(gen.integers(2, 6, size=int(gen.integers(1, 4)))), n_inputs=6)
            params = init_params(arch, seed=int(gen.integers(1 << 30)))
            x = gen.normal(size=(10, 6))
            y = (gen.random(10) < 0.5).astype(float)
            if kink_distance(params, x) < 1e-3:
                continue
            checked += 1
            _, grads = loss_and_gradient(params, x, y)
            flat_grad = flatten(grads)
            theta = get_flat(params)
            for j in range(len(theta)):
                up, down = theta.copy(), theta.copy()
                up[j] += step
                down[j] -= step
                set_flat(params, up)
                up_loss, _ = loss_and_gradient(params, x, y)
                set_flat(params, down)
                down_loss, _ = loss_and_gradient(params, x, y)
                set_flat(params, theta)
                fd = (up_loss - down_loss) / (2 * step)
                assert abs(fd - flat_grad[j]) <= 1e-5 * max(1.0, abs(flat_grad[j]), abs(fd))

    def test_duplicating_the_batch_changes_nothing(self):
        gen = np.random.default_rng(4)
        params = init_params(MlpArch((8,), n_inputs=5), seed=1)
        x = gen.normal(size=(12, 5))
        y = (gen.random(12) < 0.5).astype(float)
        loss_a, grads_a = loss_and_gradient(params, x, y)
        loss_b, grads_b = loss_and_gradient(params, np.vstack([x, x]), np.concatenate([y, y]))
        assert loss_b == pytest.approx(loss_a, rel=1e-12)
        assert np.allclose(flatten(grads_a), flatten(grads_b), atol=1e-14)

    def test_empty_batch_rejected(self):
        params = zero_net(MlpArch((2,), n_inputs=3))
        with pytest.raises(ValidationError):
            loss_and_gradient(params, np.zeros((0, 3)), np.zeros(0))


class TestTraining:
    def test_same_seed_gives_identical_parameters(self):
        gen = np.random.default_rng(5)
        x = gen.integers(0, 3, size=(2000, 42)).astype(float)
        y = (gen.random(2000) < 0.5).astype(float)
        cfg = TrainConfig(batch_size=256, epochs=3, seed=11)
        a = train(MlpArch((8, 8)), x, y, cfg)
        b = train(MlpArch((8, 8)), x, y, cfg)
        assert all(np.array_equal(wa, wb) for wa, wb in zip(a.weights, b.weights))
        assert all(np.array_equal(ba, bb) for ba, bb in zip(a.biases, b.biases))

    def test_learns_a_linear_rule(self):
        gen = np.random.default_rng(6)
        x = gen.normal(size=(4000, 42))
        logits = x @ np.linspace(-1, 1, 42)
        y = (gen.random(4000) < 1 / (1 + np.exp(-logits))).astype(float)
        params = train(MlpArch((16,)), x, y, TrainConfig(batch_size=256, epochs=20, seed=3))
        preds = forward(params, x)
        assert metrics.accuracy(preds, y > 0.5) > 0.75

    @pytest.mark.filterwarnings("ignore:invalid value encountered")
    def test_divergence_raises_with_diagnostics(self):
        gen = np.random.default_rng(7)
        x = gen.normal(size=(256, 8))
        x[0, 0] = np.nan
        y = (gen.random(256) < 0.5).astype(float)
        with pytest.raises(ConvergenceError, match="non-finite"):
            train(MlpArch((4,), n_inputs=8), x, y, TrainConfig(batch_size=256, epochs=2, seed=1))

    def test_metadata_reports_training_settings(self):
        gen = np.random.default_rng(8)
        x = gen.normal(size=(500, 10))
        y = (gen.random(500) < 0.5).astype(float)
        params = train(MlpArch((4,), n_inputs=10), x, y, TrainConfig(epochs=2, seed=2))
        meta = params.train_metadata
        assert meta["batch_size"] == 512
        assert meta["epochs_run"] <= 2
        assert np.isfinite(meta["final_train_loss"])

    def test_network_cross_entropy_reaches_linear_teacher_entropy(self, linear_250k, linear_teacher):
        from moralloop.ingest import SplitConfig, split

        train_part, test_part = split(linear_250k, SplitConfig(seed=4), 0)
        params = train(
            MlpArch(),
            harness.nn_inputs(train_part),
            train_part.saved_left.astype(float),
            TrainConfig(epochs=60, patience=5, seed=6),
        )
        preds = forward(params, harness.nn_inputs(test_part))
        ce = metrics.cross_entropy(preds, test_part.saved_left)
        floor = datagen.teacher_entropy(linear_teacher, test_part.keys)
        assert ce - floor < 0.01

    def test_network_never_beats_correctly_specified_choice_model_by_much(self, linear_250k, linear_teacher):
        # on linear-teacher data the per-character choice model is the true
        # family, so the network cannot do meaningfully better
        from moralloop.ingest import SplitConfig, split

        train_part, test_part = split(linear_250k, SplitConfig(seed=4), 0)
        cm = choicemodel.fit(choicemodel.utilitarian_spec(), train_part)
        cm_ce = metrics.cross_entropy(
            choicemodel.predict_left_prob_matrix(cm, test_part.keys), test_part.saved_left
        )
        nn = train(
            MlpArch(),
            harness.nn_inputs(train_part),
            train_part.saved_left.astype(float),
            TrainConfig(epochs=30, seed=6),
        )
        nn_ce = metrics.cross_entropy(forward(nn, harness.nn_inputs(test_part)), test_part.saved_left)
        assert nn_ce >= cm_ce - 0.005

    def test_more_data_helps_on_typed_teacher(self, typed_100k):
        from moralloop.ingest import SplitConfig, split, subsample

        accs = {}
        for size in (500, 100_000):
            sub = subsample(typed_100k, size, 3, "lc")
            train_part, test_part = split(sub, SplitConfig(seed=5), 0)
            params = train(
                MlpArch(),
                harness.nn_inputs(train_part),
                train_part.saved_left.astype(float),
                TrainConfig(epochs=30, seed=7),
            )
            preds = forward(params, harness.nn_inputs(test_part))
            accs[size] = metrics.accuracy(preds, test_part.saved_left)
        assert accs[100_000] > accs[500]


class TestGridSearch:
    def test_single_config_is_returned(self):
        gen = np.random.default_rng(9)
        x = gen.normal(size=(600, 42))
        y = (gen.random(600) < 0.5).astype(float)
        result = grid_search([(2, 16, 128)], x, y, seed=1, epochs=2)
        assert result.best_arch == MlpArch((16, 16), n_inputs=42)
        assert result.best_batch_size == 128
        assert len(result.rows) == 1

    def test_report_has_one_row_per_config(self):
        gen = np.random.default_rng(10)
        x = gen.normal(size=(600, 42))
        y = (gen.random(600) < 0.5).astype(float)
        grid = [(1, 8, 128), (2, 8, 128), (1, 16, 256)]
        result = grid_search(grid, x, y, seed=2, epochs=2)
        assert len(result.rows) == len(grid)
        for row in result.rows:
            assert 0.0 <= row.accuracy <= 1.0
            assert 0.0 <= row.auc <= 1.0
            assert np.isfinite(row.loss)

    def test_empty_grid_rejected(self):
        with pytest.raises(ValidationError):
            grid_search([], np.zeros((10, 4)), np.zeros(10))

    def test_reference_arch_is_within_noise_of_best(self, typed_100k):
        # the 3x32 reference architecture need not win the grid, but it must
        # sit within sampling noise of whatever does
        from moralloop.harness import nn_inputs
        from moralloop.ingest import subsample

        sub = subsample(typed_100k, 6_000, 13, "grid")
        x, y = nn_inputs(sub), sub.saved_left.astype(float)
        grid = [(1, 16, 512), (2, 32, 512), (3, 32, 512), (3, 64, 512)]
        result = grid_search(grid, x, y, seed=5, epochs=10)
        reference = next(r for r in result.rows if (r.n_layers, r.width) == (3, 32))
        best = max(r.accuracy for r in result.rows)
        noise = 2.0 * np.sqrt(0.25 / (0.2 * len(sub)))  # 2 SE of a validation-split accuracy
        assert best - reference.accuracy <= noise

    def test_default_grid_covers_paper_style_ranges(self):
        layers = {g[0] for g in DEFAULT_GRID}
        widths = {g[1] for g in DEFAULT_GRID}
        batches = {g[2] for g in DEFAULT_GRID}
        assert layers == {1, 2, 3}
        assert widths == {16, 32, 64}
        assert batches == {512, 8192}


class TestSerialization:
    def test_round_trip(self, tmp_path):
        gen = np.random.default_rng(11)
        params = init_params(MlpArch((8, 4), n_inputs=6), seed=3)
        params.train_metadata = {"epochs_run": 2, "batch_size": 64}
        path = tmp_path / "net.json"
        save_network(params, path)
        loaded = load_network(path)
        assert loaded.arch == params.arch
        assert all(np.allclose(a, b) for a, b in zip(loaded.weights, params.weights))
        assert loaded.train_metadata["batch_size"] == 64
        x = gen.normal(size=(5, 6))
        assert np.allclose(forward(loaded, x), forward(params, x), atol=1e-15)
