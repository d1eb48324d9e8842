"""Elastic net by cyclic coordinate descent on standardized features.

Minimizes

    (1 / 2n) * ||y - b - Z w||^2 + lam * (l1_ratio * ||w||_1 + (1 - l1_ratio) / 2 * ||w||^2)

where ``Z`` holds the features centered and scaled to unit (population)
variance. The sweep works on the Gram matrix ``Z'Z / n`` ("covariance
updates"), so one sweep costs O(d^2) regardless of n.
"""

from __future__ import annotations

import logging

import numba
import numpy as np

from ..exceptions import InvalidArgumentError

logger = logging.getLogger(__name__)


@numba.njit(cache=True, nogil=True)
def _soft_threshold(z, gamma):
    if z > gamma:
        return z - gamma
    if z < -gamma:
        return z + gamma
    return 0.0


@numba.njit(cache=True, nogil=True)
def _objective(w, gram_w, zty, yty, lam, l1_ratio):
    loss = 0.5 * (yty - 2.0 * np.dot(zty, w) + np.dot(w, gram_w))
    pen = lam * (l1_ratio * np.sum(np.abs(w)) + 0.5 * (1.0 - l1_ratio) * np.dot(w, w))
    return loss + pen


@numba.njit(cache=True, nogil=True)
def _coordinate_descent(gram, zty, yty, active, lam, l1_ratio, tol, max_iter, w, objectives):
    """Run sweeps in place on ``w``; returns (sweeps, converged).

    ``gram`` = Z'Z/n, ``zty`` = Z'y/n, ``yty`` = y'y/n with centered y.
    ``objectives[s]`` receives the objective after sweep ``s``.
    """
    d = w.shape[0]
    gram_w = gram @ w
    l1 = lam * l1_ratio
    l2 = lam * (1.0 - l1_ratio)
    for sweep in range(max_iter):
        max_step = 0.0
        for j in range(d):
            if not active[j]:
                continue
            old = w[j]
            rho = zty[j] - gram_w[j] + gram[j, j] * old
            new = _soft_threshold(rho, l1) / (gram[j, j] + l2)
            step = new - old
            if step != 0.0:
                w[j] = new
                for k in range(d):
                    gram_w[k] += gram[k, j] * step
                if abs(step) > max_step:
                    max_step = abs(step)
        objectives[sweep] = _objective(w, gram_w, zty, yty, lam, l1_ratio)
        if max_step < tol:
            return sweep + 1, True
    return max_iter, False


class ElasticNetModel:
    """Trained elastic net.

    ``weights`` live on the standardized scale; ``intercept`` is on the original
    scale, so ``predict(X) = intercept + X @ coef_``.
    """

    kind = "elastic-net"

    def __init__(self, weights, intercept, feature_means, feature_scales, penalty, l1_ratio,
                 objective_path=(), converged=True, n_iter=0):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.intercept = float(intercept)
        self.feature_means = np.asarray(feature_means, dtype=np.float64)
        self.feature_scales = np.asarray(feature_scales, dtype=np.float64)
        self.penalty = float(penalty)
        self.l1_ratio = float(l1_ratio)
        self.objective_path = np.asarray(objective_path, dtype=np.float64)
        self.converged = bool(converged)
        self.n_iter = int(n_iter)
        self.warning = None if converged else (
            f"coordinate descent stopped after {n_iter} sweeps without reaching tolerance"
        )

    @property
    def n_features(self) -> int:
        return self.weights.shape[0]

    @property
    def coef_(self) -> np.ndarray:
        """Coefficients on the original feature scale."""
        out = np.zeros_like(self.weights)
        ok = self.feature_scales > 0
        out[ok] = self.weights[ok] / self.feature_scales[ok]
        return out

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return self.intercept + X @ self.coef_

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "intercept": self.intercept,
            "feature_means": self.feature_means.tolist(),
            "feature_scales": self.feature_scales.tolist(),
            "penalty": self.penalty,
            "l1_ratio": self.l1_ratio,
            "converged": self.converged,
            "n_iter": self.n_iter,
        }

    @classmethod
    def from_dict(cls, blob: dict) -> "ElasticNetModel":
        return cls(blob["weights"], blob["intercept"], blob["feature_means"],
                   blob["feature_scales"], blob["penalty"], blob["l1_ratio"],
                   converged=blob.get("converged", True), n_iter=blob.get("n_iter", 0))


def elastic_net_fit(X, y, penalty: float = 1.0, l1_ratio: float = 0.5, tol: float = 1e-6,
                    max_iter: int = 1000) -> ElasticNetModel:
    """Fit an elastic net; see the module docstring for the objective.

    Features with zero variance keep weight zero. If ``max_iter`` sweeps pass
    without the largest coordinate update dropping below ``tol``, the last
    iterate is returned with ``converged=False`` and a warning is logged.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] < 2:
        raise InvalidArgumentError("elastic net needs features (n, d) and n >= 2 targets")
    if penalty < 0 or not 0.0 <= l1_ratio <= 1.0 or tol <= 0 or max_iter < 1:
        raise InvalidArgumentError("elastic net hyperparameters out of range")
    n, d = X.shape
    means = X.mean(axis=0)
    Xc = X - means
    scales = np.sqrt(np.einsum("ij,ij->j", Xc, Xc) / n)
    # a constant column can leave rounding-level deviations around its mean
    active = scales > 1e-12 * np.abs(means)
    active &= scales > 0
    scales = np.where(active, scales, 0.0)
    Z = np.zeros_like(Xc)
    Z[:, active] = Xc[:, active] / scales[active]
    y_mean = y.mean()
    yc = y - y_mean
    gram = (Z.T @ Z) / n
    zty = (Z.T @ yc) / n
    yty = float(yc @ yc) / n
    w = np.zeros(d)
    objectives = np.empty(max_iter)
    sweeps, converged = _coordinate_descent(gram, zty, yty, active, float(penalty),
                                            float(l1_ratio), float(tol), int(max_iter), w,
                                            objectives)
    model = ElasticNetModel(w, y_mean - float(np.dot(means[active], w[active] / scales[active])),
                            means, scales, penalty, l1_ratio,
                            objective_path=objectives[:sweeps], converged=converged,
                            n_iter=sweeps)
    if not converged:
        logger.warning("elastic net: %s", model.warning)
    return model
