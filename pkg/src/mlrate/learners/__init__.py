"""Supervised learners that produce the prediction function used for adjustment.

Every learner is described by a :class:`LearnerSpec` and trained with
:func:`train`, which returns a predictor exposing ``predict(X)``,
``n_features`` and ``to_dict()``. Trained predictors are immutable.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..exceptions import InvalidArgumentError, ModelFormatError
from ..numerics import RandomStream
from .elastic_net import ElasticNetModel, elastic_net_fit
from .gbdt import GbdtModel, gbdt_fit

KINDS = ("elastic-net", "gbdt", "constant-mean", "zero", "fixed-function")

_FUNCTIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {}


def register_function(name: str, fn: Callable[[np.ndarray], np.ndarray]) -> None:
    """Make a closed-form ``g`` available to fixed-function learners by name.

    ``fn`` maps an (n, d) feature matrix to a length-n vector. Named functions
    survive JSON round trips; anonymous callables do not.
    """
    _FUNCTIONS[name] = fn


def _identity(X: np.ndarray) -> np.ndarray:
    return np.asarray(X, dtype=np.float64)[:, 0].copy()


register_function("identity", _identity)


@dataclass(frozen=True)
class LearnerSpec:
    """A supervised-learning recipe.

    Only the hyperparameters of the chosen ``kind`` are used. Defaults follow
    common off-the-shelf settings: 100 depth-3 trees at learning rate 0.1, and
    an elastic net with penalty 1.0 and L1 ratio 0.5.

    ``cv_penalties`` (elastic net only) turns on a small deterministic K-fold
    search over the listed penalties; it is off by default.
    """

    kind: str = "gbdt"
    n_trees: int = 100
    learning_rate: float = 0.1
    max_depth: int = 3
    min_samples_leaf: int = 1
    penalty: float = 1.0
    l1_ratio: float = 0.5
    tol: float = 1e-6
    max_iter: int = 1000
    cv_penalties: tuple[float, ...] | None = None
    cv_folds: int = 3
    function: str | Callable | None = None
    seed_offset: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"unknown learner kind {self.kind!r}; choose from {KINDS}")
        if self.kind == "gbdt":
            if self.n_trees < 0 or not 0 < self.learning_rate <= 1:
                raise InvalidArgumentError("gbdt needs n_trees >= 0 and 0 < learning_rate <= 1")
            if self.max_depth < 1 or self.min_samples_leaf < 1:
                raise InvalidArgumentError("gbdt needs max_depth >= 1 and min_samples_leaf >= 1")
        if self.kind == "elastic-net":
            if self.penalty < 0 or not 0 <= self.l1_ratio <= 1:
                raise InvalidArgumentError("elastic net needs penalty >= 0 and l1_ratio in [0, 1]")
            if self.tol <= 0 or self.max_iter < 1:
                raise InvalidArgumentError("elastic net needs tol > 0 and max_iter >= 1")
            if self.cv_penalties is not None and (
                len(self.cv_penalties) == 0 or min(self.cv_penalties) < 0 or self.cv_folds < 2
            ):
                raise InvalidArgumentError("cv_penalties must be non-empty and >= 0, cv_folds >= 2")
        if self.kind == "fixed-function":
            if self.function is None:
                raise InvalidArgumentError("fixed-function learner needs a function")
            if isinstance(self.function, str) and self.function not in _FUNCTIONS:
                raise InvalidArgumentError(f"no registered function named {self.function!r}")

    def to_dict(self) -> dict:
        if self.kind == "fixed-function" and not isinstance(self.function, str):
            raise ModelFormatError("only named fixed functions can be serialized")
        out = dataclasses.asdict(self)
        if out["cv_penalties"] is not None:
            out["cv_penalties"] = list(out["cv_penalties"])
        return out

    @classmethod
    def from_dict(cls, blob: dict) -> "LearnerSpec":
        blob = dict(blob)
        if blob.get("cv_penalties") is not None:
            blob["cv_penalties"] = tuple(blob["cv_penalties"])
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in blob.items() if k in known})


class ConstantModel:
    """Predicts one value everywhere (the training mean, or zero)."""

    def __init__(self, value: float, n_features: int, kind: str = "constant-mean"):
        self.value = float(value)
        self.n_features = int(n_features)
        self.kind = kind

    def predict(self, X) -> np.ndarray:
        return np.full(np.asarray(X).shape[0], self.value)

    def to_dict(self) -> dict:
        return {"value": self.value, "n_features": self.n_features}


class FixedFunctionModel:
    """Wraps a data-independent closed-form ``g``; training is a no-op."""

    kind = "fixed-function"

    def __init__(self, function, n_features: int):
        self.name = function if isinstance(function, str) else None
        self.function = _FUNCTIONS[function] if isinstance(function, str) else function
        self.n_features = int(n_features)

    def predict(self, X) -> np.ndarray:
        out = np.asarray(self.function(np.asarray(X, dtype=np.float64)), dtype=np.float64)
        return out.reshape(-1)

    def to_dict(self) -> dict:
        if self.name is None:
            raise ModelFormatError("only named fixed functions can be serialized")
        return {"function": self.name, "n_features": self.n_features}


def _cv_penalty(spec: LearnerSpec, X: np.ndarray, y: np.ndarray) -> float:
    stream = RandomStream(spec.seed_offset, 0, (0xC5,))
    n = X.shape[0]
    k = min(spec.cv_folds, n)
    perm = stream.permutation(n)
    folds = np.empty(n, dtype=np.int64)
    for j, block in enumerate(np.array_split(perm, k)):
        folds[block] = j
    best, best_err = None, np.inf
    for lam in spec.cv_penalties:
        err = 0.0
        for j in range(k):
            tr = folds != j
            m = elastic_net_fit(X[tr], y[tr], lam, spec.l1_ratio, spec.tol, spec.max_iter)
            r = y[~tr] - m.predict(X[~tr])
            err += float(r @ r)
        if err < best_err:
            best, best_err = lam, err
    return float(best)


def train(spec: LearnerSpec, features, targets):
    """Train the learner described by ``spec``; deterministic given its inputs."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise InvalidArgumentError(
            f"features {X.shape} and targets {y.shape} do not describe the same rows"
        )
    if X.shape[0] < 2:
        raise InvalidArgumentError("training needs at least two rows")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise InvalidArgumentError("training data contains non-finite values")
    d = X.shape[1]
    if spec.kind == "zero":
        return ConstantModel(0.0, d, kind="zero")
    if spec.kind == "constant-mean":
        return ConstantModel(float(y.mean()), d)
    if spec.kind == "fixed-function":
        return FixedFunctionModel(spec.function, d)
    if spec.kind == "gbdt":
        return gbdt_fit(X, y, spec.n_trees, spec.learning_rate, spec.max_depth,
                        spec.min_samples_leaf)
    penalty = spec.penalty if spec.cv_penalties is None else _cv_penalty(spec, X, y)
    return elastic_net_fit(X, y, penalty, spec.l1_ratio, spec.tol, spec.max_iter)


def predict(model, features) -> np.ndarray:
    """Evaluate ``model`` row by row, checking the column count against training."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise InvalidArgumentError(
            f"model expects {model.n_features} feature columns, got shape {X.shape}"
        )
    return model.predict(X)


def model_to_dict(model) -> dict:
    return {"kind": model.kind, "state": model.to_dict()}


def model_from_dict(blob: dict):
    try:
        kind = blob["kind"]
        state = blob["state"]
        if kind == "gbdt":
            return GbdtModel.from_dict(state)
        if kind == "elastic-net":
            return ElasticNetModel.from_dict(state)
        if kind in ("constant-mean", "zero"):
            return ConstantModel(state["value"], state["n_features"], kind=kind)
        if kind == "fixed-function":
            if state["function"] not in _FUNCTIONS:
                raise ModelFormatError(f"unknown fixed function {state['function']!r}")
            return FixedFunctionModel(state["function"], state["n_features"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model blob: {exc}") from None
    raise ModelFormatError(f"unknown model kind {kind!r}")


__all__ = [
    "KINDS", "LearnerSpec", "ConstantModel", "FixedFunctionModel", "ElasticNetModel",
    "GbdtModel", "elastic_net_fit", "gbdt_fit", "train", "predict", "register_function",
    "model_to_dict", "model_from_dict",
]
