"""Cross-fitted out-of-fold predictions, plus the single pre-period model mode."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import ExperimentDataset, PanelDataset, require_valid, split_folds
from .exceptions import InvalidArgumentError, SchemaError
from .learners import LearnerSpec, model_from_dict, model_to_dict, predict, train
from .numerics import RandomStream


@dataclass(frozen=True, eq=False)
class CrossFitResult:
    """Out-of-fold predictions: ``predictions[i]`` comes from ``models[folds[i]]``,
    which never saw row ``i`` during training."""

    folds: np.ndarray
    predictions: np.ndarray
    g_bar: float
    models: tuple
    k: int

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "folds": self.folds.tolist(),
            "predictions": self.predictions.tolist(),
            "g_bar": self.g_bar,
            "models": [model_to_dict(m) for m in self.models],
        }

    @classmethod
    def from_dict(cls, blob: dict) -> "CrossFitResult":
        preds = np.asarray(blob["predictions"], dtype=np.float64)
        return cls(np.asarray(blob["folds"], dtype=np.int64), preds, float(blob["g_bar"]),
                   tuple(model_from_dict(m) for m in blob["models"]), int(blob["k"]))


def _fold_model(spec, X, y, folds, fold, aux):
    train_rows = folds != fold
    Xtr, ytr = X[train_rows], y[train_rows]
    if aux is not None:
        Xtr = np.vstack([Xtr, aux[0]])
        ytr = np.concatenate([ytr, aux[1]])
    if ytr.shape[0] < 2:
        raise InvalidArgumentError(f"fold {fold}: complement has fewer than 2 rows")
    return train(spec, Xtr, ytr)


def cross_fit(
    ds: ExperimentDataset,
    spec: LearnerSpec,
    k: int = 2,
    stream: RandomStream | None = None,
    features: Sequence[str | int] | None = None,
    *,
    folds: np.ndarray | None = None,
    auxiliary: ExperimentDataset | None = None,
    parallelism: int = 1,
) -> CrossFitResult:
    """Train one model per fold complement and predict on the held-out fold.

    Only the outcome and the selected covariates reach the learner; the
    treatment column is never a training feature.

    Parameters
    ----------
    ds : ExperimentDataset
    spec : LearnerSpec
    k : int
        Number of folds (2 by default).
    stream : RandomStream, optional
        Source of the fold split; ignored when ``folds`` is given.
    features : sequence of column names or indices, optional
        Covariates used for prediction (all columns by default).
    folds : array of int, optional
        A precomputed assignment ``folds[i] in 0..k-1``.
    auxiliary : ExperimentDataset, optional
        Extra non-experiment rows (same feature columns) added, unweighted, to
        every fold's training set.
    parallelism : int
        Fold models are independent and may train on worker threads; results
        are merged by fold index, so output does not depend on scheduling.
    """
    require_valid(ds)
    X = ds.features(features)
    y = ds.outcome
    if folds is None:
        if stream is None:
            raise InvalidArgumentError("cross_fit needs a stream or an explicit fold assignment")
        folds = split_folds(ds.n, k, stream)
    else:
        folds = np.asarray(folds, dtype=np.int64)
        if folds.shape != (ds.n,) or folds.min() < 0 or folds.max() >= k:
            raise InvalidArgumentError("fold assignment must give each row an index in 0..k-1")
        if k < 2:
            raise InvalidArgumentError("cross-fitting needs k >= 2")
    aux = None
    if auxiliary is not None:
        aux = (auxiliary.features(features), auxiliary.outcome)
        if aux[0].shape[1] != X.shape[1]:
            raise InvalidArgumentError("auxiliary data must carry the same feature columns")

    if parallelism > 1 and k > 1:
        with ThreadPoolExecutor(max_workers=min(parallelism, k)) as pool:
            models = list(pool.map(lambda f: _fold_model(spec, X, y, folds, f, aux), range(k)))
    else:
        models = [_fold_model(spec, X, y, folds, f, aux) for f in range(k)]

    preds = np.empty(ds.n)
    for f, model in enumerate(models):
        rows = folds == f
        if np.any(rows):
            preds[rows] = predict(model, X[rows])
    preds.setflags(write=False)
    return CrossFitResult(folds, preds, float(preds.mean()), tuple(models), k)


def preperiod_fit(panel: PanelDataset, spec: LearnerSpec, return_model: bool = False):
    """Fit one model entirely on pre-experiment data and predict current outcomes.

    The model maps t-2 features (``panel.lag_features``) to the t-1 outcome
    (``panel.y_pre``) and is then applied to t-1 features
    (``panel.pre_features``). The result depends on pre-experiment data only,
    so it can be used as an ordinary covariate without cross-fitting.
    """
    if panel.lag_features is None or panel.pre_features is None:
        raise SchemaError("pre-period fitting needs both lag_features (t-2) and pre_features (t-1)")
    if panel.lag_features.shape[1] != panel.pre_features.shape[1]:
        raise SchemaError("lag_features and pre_features must describe the same columns")
    model = train(spec, panel.lag_features, panel.y_pre)
    preds = predict(model, panel.pre_features)
    return (preds, model) if return_model else preds
