"""Conditional-logit choice models over dilemmas.

A side's value is the sum of its characters' utilities plus weighted
side-level principle indicators; the probability of saving the left side is
the logistic function of the left-minus-right value difference. Utilities
can be tied across characters (one shared class, a humans/animals split, or
fully free), which yields the nested model family used for comparisons.

Because only value differences enter the choice rule and features are
left-minus-right differences, the model has no intercept: a character's
utility is the same on either side, and parameters are identified directly
from count differences (no normalization gauge is needed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError
from .features import (
    FeatureContext,
    PrincipleSpec,
    default_type_principles,
    eval_principle,
    intervention_principle,
    parse_principle,
    unlawful_principle,
)
from .scenario import Scenario, Side, Taxonomy, active_taxonomy, detect_problem_type

SEPARABILITY_NORM = 50.0
SATURATED_MARGIN = 15.0  # every row beyond p = 1 - 3e-7 marks an unbounded ray


@dataclass(frozen=True)
class ChoiceModelSpec:
    """Parameter tying plus the principle list; fully determines k."""

    name: str
    tying: dict  # character name -> contiguous class id
    class_names: tuple
    principles: tuple = ()

    def __post_init__(self):
        tax = active_taxonomy()
        missing = set(tax.names) - set(self.tying)
        if missing:
            raise ValidationError(f"tying map must cover every character; missing {sorted(missing)}")
        ids = sorted(set(self.tying.values()))
        if ids != list(range(len(ids))):
            raise ValidationError("tying class ids must be contiguous from 0")
        if len(self.class_names) != len(ids):
            raise ValidationError("one class name per tying class required")
        names = [p.name for p in self.principles]
        if len(names) != len(set(names)):
            raise ValidationError("principle names must be unique within a model spec")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def k(self) -> int:
        return self.n_classes + len(self.principles)

    def with_principles(self, extra: Sequence[PrincipleSpec], name: Optional[str] = None) -> "ChoiceModelSpec":
        return replace(
            self,
            name=name or self.name,
            principles=self.principles + tuple(extra),
        )


def equal_weight_spec() -> ChoiceModelSpec:
    """Every character shares one utility; only group size matters."""
    tax = active_taxonomy()
    return ChoiceModelSpec("equal_weight", {n: 0 for n in tax.names}, ("everyone",))


def animals_vs_people_spec() -> ChoiceModelSpec:
    """Two utilities: one for all humans, one for all animals."""
    tax = active_taxonomy()
    tying = {n: (0 if tax.by_name[n].species == "human" else 1) for n in tax.names}
    return ChoiceModelSpec("animals_vs_people", tying, ("human", "animal"))


def utilitarian_spec() -> ChoiceModelSpec:
    """A free utility per character type."""
    tax = active_taxonomy()
    return ChoiceModelSpec("utilitarian", {n: i for i, n in enumerate(tax.names)}, tax.names)


def expanded_spec() -> ChoiceModelSpec:
    """Utilitarian plus the swerving and unlawful-crossing principles."""
    base = utilitarian_spec()
    return replace(base, name="expanded", principles=(intervention_principle(), unlawful_principle()))


def expanded_types_spec() -> ChoiceModelSpec:
    """Expanded plus the six problem-type pole features."""
    return expanded_spec().with_principles(default_type_principles(), name="expanded_types")


STANDARD_SPECS = {
    "equal_weight": equal_weight_spec,
    "animals_vs_people": animals_vs_people_spec,
    "utilitarian": utilitarian_spec,
    "expanded": expanded_spec,
    "expanded_types": expanded_types_spec,
}


@dataclass(frozen=True)
class FitMetadata:
    converged: bool = True
    iterations: int = 0
    gradient_norm: float = 0.0
    tolerance: float = 0.0
    ridge: float = 0.0
    seed: int = 0
    separable: bool = False


@dataclass(frozen=True)
class ChoiceModelParams:
    """Fitted (or hand-set) model: per-class utilities and principle weights."""

    spec: ChoiceModelSpec
    utilities: np.ndarray
    principle_weights: np.ndarray
    fit_metadata: FitMetadata = field(default_factory=FitMetadata)

    def __post_init__(self):
        utilities = np.asarray(self.utilities, dtype=np.float64)
        weights = np.asarray(self.principle_weights, dtype=np.float64)
        if utilities.shape != (self.spec.n_classes,):
            raise ValidationError(f"expected {self.spec.n_classes} utilities, got shape {utilities.shape}")
        if weights.shape != (len(self.spec.principles),):
            raise ValidationError(
                f"expected {len(self.spec.principles)} principle weights, got shape {weights.shape}"
            )
        if not (np.isfinite(utilities).all() and np.isfinite(weights).all()):
            raise ValidationError("parameters must be finite")
        object.__setattr__(self, "utilities", utilities)
        object.__setattr__(self, "principle_weights", weights)

    @property
    def k(self) -> int:
        return self.spec.k

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.utilities, self.principle_weights])

    @classmethod
    def from_theta(cls, spec: ChoiceModelSpec, theta: np.ndarray, fit_metadata=FitMetadata()):
        theta = np.asarray(theta, dtype=np.float64)
        return cls(spec, theta[: spec.n_classes], theta[spec.n_classes:], fit_metadata)


def zero_params(spec: ChoiceModelSpec) -> ChoiceModelParams:
    return ChoiceModelParams(spec, np.zeros(spec.n_classes), np.zeros(len(spec.principles)))


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------


def side_value(params: ChoiceModelParams, s: Scenario, side: Side, taxonomy: Taxonomy = None) -> float:
    """Sum of tied utilities times counts plus weighted principle indicators."""
    tax = taxonomy or active_taxonomy()
    comp = s.side(side)
    value = 0.0
    for name, count in comp.counts.items():
        value += params.utilities[params.spec.tying[name]] * count
    match = detect_problem_type(s, tax)
    for weight, principle in zip(params.principle_weights, params.spec.principles):
        if eval_principle(principle, s, side, tax, match=match):
            value += weight
    return value


def sigmoid(z):
    """Numerically stable logistic; no overflow for any finite argument."""
    z = np.asarray(z, dtype=np.float64)
    scalar = z.ndim == 0
    z = np.atleast_1d(z)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return float(out[0]) if scalar else out


def predict_left_prob(params: ChoiceModelParams, s: Scenario, taxonomy: Taxonomy = None) -> float:
    """Probability of saving the left side: logistic(v_left - v_right)."""
    z = side_value(params, s, Side.LEFT, taxonomy) - side_value(params, s, Side.RIGHT, taxonomy)
    return float(sigmoid(z))


def value_difference_matrix(params: ChoiceModelParams, ctx: FeatureContext) -> np.ndarray:
    return ctx.design_matrix(params.spec) @ params.theta


def predict_left_prob_matrix(params: ChoiceModelParams, keys_or_ctx) -> np.ndarray:
    """Vectorized left-save probabilities over a key matrix or FeatureContext."""
    ctx = keys_or_ctx if isinstance(keys_or_ctx, FeatureContext) else FeatureContext(np.asarray(keys_or_ctx))
    return sigmoid(value_difference_matrix(params, ctx))


def log_likelihood(params: ChoiceModelParams, data, ctx: Optional[FeatureContext] = None) -> float:
    """Total log-likelihood of observed saves under the model.

    Computed as log(sigmoid(+-z)) via logaddexp, which stays finite for any
    |z| a float64 can hold, so no probability clamping is needed.
    """
    keys, saved_left = _keys_and_labels(data)
    if len(keys) == 0:
        raise ValidationError("dataset is empty")
    ctx = ctx or FeatureContext(keys)
    z = value_difference_matrix(params, ctx)
    return float(_loglik_from_z(z, saved_left.astype(np.float64)))


def _loglik_from_z(z: np.ndarray, y: np.ndarray) -> float:
    # log sigmoid(z) = -logaddexp(0, -z); choose the sign per observed side
    signed = np.where(y > 0.5, z, -z)
    return -np.logaddexp(0.0, -signed).sum()


def _keys_and_labels(data):
    keys = getattr(data, "keys", None)
    saved = getattr(data, "saved_left", None)
    if keys is None or saved is None:
        raise ValidationError("expected an object with .keys and .saved_left arrays")
    return np.asarray(keys), np.asarray(saved)


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitConfig:
    """Newton fit controls. tolerance_scale is multiplied by the row count to
    give the gradient max-norm convergence threshold."""

    tolerance_scale: float = 1e-8
    max_iterations: int = 100
    ridge: float = 1e-6
    seed: int = 0


def nll_and_grad(theta: np.ndarray, x: np.ndarray, y: np.ndarray, ridge: float = 0.0):
    """Negative log-likelihood and its gradient for the difference-logit model."""
    z = x @ theta
    p = sigmoid(z)
    nll = -_loglik_from_z(z, y) + 0.5 * ridge * float(theta @ theta)
    grad = -(x.T @ (y - p)) + ridge * theta
    return nll, grad


def fit(
    spec: ChoiceModelSpec,
    train,
    cfg: FitConfig = FitConfig(),
    ctx: Optional[FeatureContext] = None,
) -> ChoiceModelParams:
    """Maximum-likelihood fit by damped Newton iteration.

    Deterministic: starts from zero, uses exact Hessian solves with
    backtracking line search, and stops when the gradient max-norm falls
    below tolerance_scale * N. A tiny L2 ridge (recorded in the metadata,
    not counted in k) keeps the optimum finite on separable data.

    Separability is flagged when the parameter norm passes
    SEPARABILITY_NORM, or when every training row ends up classified with a
    saturated margin (the likelihood's unbounded-ray signature: the gradient
    criterion halts that ray near |z| = ln(1/tolerance) long before the
    parameter norm itself gets large). Non-convergence is flagged, never
    silent.
    """
    keys, saved_left = _keys_and_labels(train)
    n = len(keys)
    if n == 0:
        raise ValidationError("training dataset is empty")
    ctx = ctx or FeatureContext(keys)
    x = ctx.design_matrix(spec)
    y = saved_left.astype(np.float64)
    tolerance = cfg.tolerance_scale * n

    theta = np.zeros(spec.k)
    nll, grad = nll_and_grad(theta, x, y, cfg.ridge)
    iterations = 0
    converged = float(np.abs(grad).max()) < tolerance
    eye = np.eye(spec.k)
    while not converged and iterations < cfg.max_iterations:
        iterations += 1
        p = sigmoid(x @ theta)
        w = np.clip(p * (1.0 - p), 1e-12, None)
        hess = (x * w[:, None]).T @ x + cfg.ridge * eye
        try:
            step = np.linalg.solve(hess, -grad)
        except np.linalg.LinAlgError:
            # singular Hessian (e.g. ridge 0 on separable data): min-norm
            # Newton direction keeps moving along the unbounded ray
            step = np.linalg.lstsq(hess, -grad, rcond=None)[0]
        # backtracking: accept the first step that lowers the penalized NLL
        alpha = 1.0
        for _ in range(50):
            candidate = theta + alpha * step
            cand_nll, cand_grad = nll_and_grad(candidate, x, y, cfg.ridge)
            if cand_nll <= nll:
                theta, nll, grad = candidate, cand_nll, cand_grad
                break
            alpha *= 0.5
        else:
            break  # no descent possible at float resolution
        converged = float(np.abs(grad).max()) < tolerance

    margins = np.where(y > 0.5, x @ theta, -(x @ theta))
    separable = bool(np.abs(theta).max() > SEPARABILITY_NORM or margins.min() > SATURATED_MARGIN)
    metadata = FitMetadata(
        converged=bool(converged),
        iterations=iterations,
        gradient_norm=float(np.abs(grad).max()),
        tolerance=tolerance,
        ridge=cfg.ridge,
        seed=cfg.seed,
        separable=separable,
    )
    return ChoiceModelParams.from_theta(spec, theta, metadata)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def params_to_dict(params: ChoiceModelParams) -> dict:
    spec = params.spec
    return {
        "kind": "choice_model",
        "modelType": spec.name,
        "tyingClasses": {name: int(cid) for name, cid in spec.tying.items()},
        "classNames": list(spec.class_names),
        "utilities": [float(u) for u in params.utilities],
        "principles": [
            {"name": p.name, "source": p.source, "weight": float(w)}
            for p, w in zip(spec.principles, params.principle_weights)
        ],
        "k": params.k,
        "fitMetadata": {
            "converged": params.fit_metadata.converged,
            "iterations": params.fit_metadata.iterations,
            "gradientNorm": params.fit_metadata.gradient_norm,
            "tolerance": params.fit_metadata.tolerance,
            "ridge": params.fit_metadata.ridge,
            "seed": params.fit_metadata.seed,
            "separable": params.fit_metadata.separable,
        },
    }


def params_from_dict(raw: dict) -> ChoiceModelParams:
    if raw.get("kind") != "choice_model":
        raise ValidationError("not a choice-model file")
    tying = {name: int(cid) for name, cid in raw["tyingClasses"].items()}
    principles = tuple(parse_principle(p["source"]) for p in raw["principles"])
    spec = ChoiceModelSpec(raw["modelType"], tying, tuple(raw["classNames"]), principles)
    meta_raw = raw.get("fitMetadata", {})
    metadata = FitMetadata(
        converged=meta_raw.get("converged", True),
        iterations=meta_raw.get("iterations", 0),
        gradient_norm=meta_raw.get("gradientNorm", 0.0),
        tolerance=meta_raw.get("tolerance", 0.0),
        ridge=meta_raw.get("ridge", 0.0),
        seed=meta_raw.get("seed", 0),
        separable=meta_raw.get("separable", False),
    )
    weights = np.array([p["weight"] for p in raw["principles"]], dtype=np.float64)
    return ChoiceModelParams(spec, np.array(raw["utilities"], dtype=np.float64), weights, metadata)


def save_model(params: ChoiceModelParams, path) -> None:
    with open(path, "w") as fh:
        json.dump(params_to_dict(params), fh, indent=2)
        fh.write("\n")


def load_model(path) -> ChoiceModelParams:
    with open(path) as fh:
        return params_from_dict(json.load(fh))
