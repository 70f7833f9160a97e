"""Feedforward reference network on the raw dilemma encoding.

The black-box baseline: an MLP that maps the 42-component key (cast to
reals, no standardization) through ReLU hidden layers to a single logistic
output, trained to minimize binary cross-entropy with minibatch Adam.
Unlike the choice models it is free to weight a character differently by
side and to construct arbitrary interactions.

Everything is seeded and deterministic: initialization, the validation
carve-out, and per-epoch shuffles all come from named Philox streams, so
two runs with the same seed produce identical parameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import rng
from .errors import ConvergenceError, ValidationError
from .metrics import accuracy, auc

BATCH_SIZE_THRESHOLD = 100_000  # above this many rows, use the large batch
LARGE_BATCH = 8192
SMALL_BATCH = 512
MIN_VALIDATION_ROWS = 200  # smaller carve-outs are too noisy to stop on


def default_batch_size(n_rows: int) -> int:
    return LARGE_BATCH if n_rows > BATCH_SIZE_THRESHOLD else SMALL_BATCH


@dataclass(frozen=True)
class MlpArch:
    """Layer widths; ReLU activations and a single logistic output unit."""

    hidden_layers: tuple = (32, 32, 32)
    n_inputs: int = 42

    def __post_init__(self):
        if self.n_inputs < 1 or any(w < 1 for w in self.hidden_layers):
            raise ValidationError("layer widths must be at least 1")
        object.__setattr__(self, "hidden_layers", tuple(int(w) for w in self.hidden_layers))

    @property
    def layer_sizes(self) -> tuple:
        return (self.n_inputs,) + self.hidden_layers + (1,)

    def param_count(self) -> int:
        sizes = self.layer_sizes
        return sum(sizes[i] * sizes[i + 1] + sizes[i + 1] for i in range(len(sizes) - 1))


@dataclass
class MlpParams:
    arch: MlpArch
    weights: list  # weights[i]: (fan_in, fan_out) float64
    biases: list   # biases[i]: (fan_out,) float64
    train_metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        sizes = self.arch.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValidationError("one weight matrix and bias vector per layer required")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise ValidationError(
                    f"layer {i} shapes {w.shape}/{b.shape} do not chain {sizes[i]}->{sizes[i + 1]}"
                )

    @property
    def k(self) -> int:
        return self.arch.param_count()

    def copy(self) -> "MlpParams":
        return MlpParams(
            self.arch,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            dict(self.train_metadata),
        )


def init_params(arch: MlpArch, seed: int) -> MlpParams:
    """He-scaled random initialization from the seeded stream."""
    weights, biases = [], []
    sizes = arch.layer_sizes
    gen = rng.stream(seed, "init")
    for i in range(len(sizes) - 1):
        scale = np.sqrt(2.0 / sizes[i])
        weights.append(gen.normal(0.0, scale, size=(sizes[i], sizes[i + 1])))
        biases.append(np.zeros(sizes[i + 1]))
    return MlpParams(arch, weights, biases)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward_trace(params: MlpParams, x: np.ndarray):
    """Hidden activations plus the final pre-activation, for backprop."""
    activations = [x]
    a = x
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        a = np.maximum(a @ w + b, 0.0)
        activations.append(a)
    z_out = (a @ params.weights[-1] + params.biases[-1])[:, 0]
    return activations, z_out


def forward(params: MlpParams, x) -> "float | np.ndarray":
    """Probability of saving the left side; accepts one input or a batch."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.arch.n_inputs:
        raise ValidationError(f"input must have {params.arch.n_inputs} components, got shape {x.shape}")
    _, z_out = _forward_trace(params, x)
    p = _sigmoid(z_out)
    return float(p[0]) if single else p


def loss_and_gradient(params: MlpParams, x: np.ndarray, y: np.ndarray):
    """Mean binary cross-entropy and exact backpropagated gradients.

    The loss is computed from the final pre-activation as
    mean(softplus(z) - y*z), which is the cross-entropy of a logistic unit
    without ever forming an unstable log(p).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) == 0:
        raise ValidationError("batch must be non-empty")
    activations, z_out = _forward_trace(params, x)
    loss = float(np.mean(np.logaddexp(0.0, z_out) - y * z_out))

    batch = len(x)
    delta = ((_sigmoid(z_out) - y) / batch)[:, None]  # d loss / d z_out
    grad_w = [None] * len(params.weights)
    grad_b = [None] * len(params.biases)
    grad_w[-1] = activations[-1].T @ delta
    grad_b[-1] = delta.sum(axis=0)
    upstream = delta @ params.weights[-1].T
    for layer in range(len(params.weights) - 2, -1, -1):
        dz = upstream * (activations[layer + 1] > 0)
        grad_w[layer] = activations[layer].T @ dz
        grad_b[layer] = dz.sum(axis=0)
        if layer > 0:
            upstream = dz @ params.weights[layer].T
    return loss, (grad_w, grad_b)


def batch_loss(params: MlpParams, x: np.ndarray, y: np.ndarray) -> float:
    _, z_out = _forward_trace(params, np.asarray(x, dtype=np.float64))
    return float(np.mean(np.logaddexp(0.0, z_out) - np.asarray(y, dtype=np.float64) * z_out))


@dataclass(frozen=True)
class TrainConfig:
    """Minibatch Adam controls.

    batch_size None applies the dataset-size rule (8192 above 100k rows,
    512 otherwise). tolerance is the minimum drop in validation loss that
    counts as an improvement for early stopping; training stops after
    `patience` evaluations without one and the best parameters are kept.
    Early stopping engages only when the validation carve-out reaches
    MIN_VALIDATION_ROWS; below that the loss signal is noise and the full
    epoch budget runs on all rows.
    """

    batch_size: Optional[int] = None
    epochs: int = 30
    learning_rate: float = 4e-3
    seed: int = 0
    tolerance: float = 1e-4
    val_fraction: float = 0.1
    patience: int = 3

    def __post_init__(self):
        if self.batch_size is not None and self.batch_size < 1:
            raise ValidationError("batch_size must be at least 1")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValidationError("epochs must be at least 1")


class _Adam:
    def __init__(self, params: MlpParams, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m_w = [np.zeros_like(w) for w in params.weights]
        self.v_w = [np.zeros_like(w) for w in params.weights]
        self.m_b = [np.zeros_like(b) for b in params.biases]
        self.v_b = [np.zeros_like(b) for b in params.biases]

    def step(self, params: MlpParams, grads):
        grad_w, grad_b = grads
        self.t += 1
        correct1 = 1.0 - self.beta1 ** self.t
        correct2 = 1.0 - self.beta2 ** self.t
        for i in range(len(params.weights)):
            for value, grad, m, v in (
                (params.weights[i], grad_w[i], self.m_w[i], self.v_w[i]),
                (params.biases[i], grad_b[i], self.m_b[i], self.v_b[i]),
            ):
                m *= self.beta1
                m += (1 - self.beta1) * grad
                v *= self.beta2
                v += (1 - self.beta2) * grad * grad
                value -= self.lr * (m / correct1) / (np.sqrt(v / correct2) + self.eps)


def train(arch: MlpArch, x: np.ndarray, y: np.ndarray, cfg: TrainConfig = TrainConfig()) -> MlpParams:
    """Seeded minibatch training with early stopping on a validation carve-out."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != arch.n_inputs:
        raise ValidationError(f"training inputs must be (n, {arch.n_inputs}), got {x.shape}")
    if len(x) != len(y) or len(x) == 0:
        raise ValidationError("inputs and labels must be non-empty and equal length")

    n = len(x)
    batch_size = cfg.batch_size or default_batch_size(n)
    n_val = int(round(cfg.val_fraction * n))
    use_val = MIN_VALIDATION_ROWS <= n_val < n
    if use_val:
        perm = rng.stream(cfg.seed, "val-split").permutation(n)
        val_idx, fit_idx = perm[:n_val], perm[n_val:]
        x_fit, y_fit = x[fit_idx], y[fit_idx]
        x_val, y_val = x[val_idx], y[val_idx]
    else:
        x_fit, y_fit = x, y
        x_val = y_val = None

    params = init_params(arch, cfg.seed)
    optimizer = _Adam(params, cfg.learning_rate)
    best = params.copy()
    best_val = np.inf
    stale = 0
    epochs_run = 0
    stopped_early = False

    for epoch in range(cfg.epochs):
        order = rng.stream(cfg.seed, "shuffle", epoch).permutation(len(x_fit))
        for start in range(0, len(x_fit), batch_size):
            idx = order[start:start + batch_size]
            loss, grads = loss_and_gradient(params, x_fit[idx], y_fit[idx])
            if not np.isfinite(loss):
                raise ConvergenceError(
                    f"training diverged: non-finite loss at epoch {epoch}, "
                    f"step {start // batch_size} (lr={cfg.learning_rate}, batch={batch_size})"
                )
            optimizer.step(params, grads)
        epochs_run = epoch + 1
        if use_val:
            val_loss = batch_loss(params, x_val, y_val)
            if not np.isfinite(val_loss):
                raise ConvergenceError(f"training diverged: non-finite validation loss at epoch {epoch}")
            if val_loss < best_val - cfg.tolerance:
                best_val = val_loss
                best = params.copy()
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    stopped_early = True
                    break

    final = best if (use_val and np.isfinite(best_val)) else params
    final.train_metadata = {
        "epochs_run": epochs_run,
        "stopped_early": stopped_early,
        "batch_size": batch_size,
        "learning_rate": cfg.learning_rate,
        "seed": cfg.seed,
        "final_train_loss": batch_loss(final, x_fit, y_fit),
        "best_val_loss": float(best_val) if use_val else None,
        "rng": rng.ALGORITHM,
    }
    return final


# ---------------------------------------------------------------------------
# Grid search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridRow:
    n_layers: int
    width: int
    batch_size: int
    accuracy: float
    auc: float
    loss: float


@dataclass(frozen=True)
class GridSearchResult:
    rows: tuple
    best_arch: MlpArch
    best_batch_size: int


DEFAULT_GRID = tuple(
    (layers, width, batch)
    for layers in (1, 2, 3)
    for width in (16, 32, 64)
    for batch in (SMALL_BATCH, LARGE_BATCH)
)


def grid_search(
    grid: Sequence[tuple],
    x: np.ndarray,
    y: np.ndarray,
    seed: int = 0,
    epochs: int = 30,
    val_fraction: float = 0.2,
) -> GridSearchResult:
    """Train one network per (layers, width, batch) config and pick the best.

    Each config gets an independent derived seed; all are scored on the same
    held-out validation slice by accuracy, with ties broken by grid order.
    """
    if not grid:
        raise ValidationError("grid must contain at least one configuration")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n_val = max(1, int(round(val_fraction * len(x))))
    if n_val >= len(x):
        raise ValidationError("not enough rows to carve a validation split")
    perm = rng.stream(seed, "grid-split").permutation(len(x))
    val_idx, fit_idx = perm[:n_val], perm[n_val:]

    rows = []
    best_index = 0
    for i, (n_layers, width, batch_size) in enumerate(grid):
        arch = MlpArch(hidden_layers=(width,) * n_layers, n_inputs=x.shape[1])
        cfg = TrainConfig(
            batch_size=batch_size,
            epochs=epochs,
            seed=rng.derive_key(seed, "grid", i) % (2 ** 63),
        )
        params = train(arch, x[fit_idx], y[fit_idx], cfg)
        preds = forward(params, x[val_idx])
        labels = y[val_idx] > 0.5
        rows.append(
            GridRow(
                n_layers=n_layers,
                width=width,
                batch_size=batch_size,
                accuracy=accuracy(preds, labels),
                auc=auc(preds, labels),
                loss=batch_loss(params, x[val_idx], y[val_idx]),
            )
        )
        if rows[i].accuracy > rows[best_index].accuracy:
            best_index = i
    best_layers, best_width, best_batch = grid[best_index]
    return GridSearchResult(
        rows=tuple(rows),
        best_arch=MlpArch(hidden_layers=(best_width,) * best_layers, n_inputs=x.shape[1]),
        best_batch_size=best_batch,
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def network_to_dict(params: MlpParams) -> dict:
    return {
        "kind": "mlp",
        "arch": {"hiddenLayers": list(params.arch.hidden_layers), "nInputs": params.arch.n_inputs},
        "weights": [w.tolist() for w in params.weights],  # row-major, fan_in x fan_out
        "biases": [b.tolist() for b in params.biases],
        "k": params.k,
        "trainMetadata": params.train_metadata,
    }


def network_from_dict(raw: dict) -> MlpParams:
    if raw.get("kind") != "mlp":
        raise ValidationError("not a network file")
    arch = MlpArch(tuple(raw["arch"]["hiddenLayers"]), raw["arch"].get("nInputs", 42))
    weights = [np.array(w, dtype=np.float64) for w in raw["weights"]]
    biases = [np.array(b, dtype=np.float64) for b in raw["biases"]]
    return MlpParams(arch, weights, biases, dict(raw.get("trainMetadata", {})))


def save_network(params: MlpParams, path) -> None:
    with open(path, "w") as fh:
        json.dump(network_to_dict(params), fh)
        fh.write("\n")


def load_network(path) -> MlpParams:
    with open(path) as fh:
        return network_from_dict(json.load(fh))
