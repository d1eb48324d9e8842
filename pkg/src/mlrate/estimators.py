"""Average-treatment-effect estimators and their normal-theory inference.

The adjusted estimator regresses the outcome on ``(1, T, g, T*g)`` where ``g``
is a (cross-fitted) prediction of the outcome. The treatment effect is read
off as ``beta_1 + beta_3 * mean(g)``, which equals the coefficient on ``T`` in
the centered parameterization ``(1, T, g, T*(g - mean(g)))``. Its variance is
estimated by the plug-in formula

    Var(Y|T=0)/(1-p) + Var(Y|T=1)/p
        - Var(g)/(p(1-p)) * [beta_2 * p + (beta_2 + beta_3) * (1-p)]^2

whose subtracted term is a square, so the adjusted variance never exceeds the
difference-in-means variance computed on the same data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .crossfit import CrossFitResult, cross_fit
from .data import ExperimentDataset, PanelDataset
from .exceptions import InvalidArgumentError
from .learners import LearnerSpec
from .numerics import (
    RandomStream,
    least_squares,
    normal_quantile,
    sample_correlation,
    sample_variance,
)

# g is treated as constant when its sample variance is this small relative to Y's
DEGENERATE_RTOL = 1e-12


@dataclass(frozen=True)
class AdjustmentFit:
    beta: np.ndarray
    alpha1: float
    g_bar: float
    p_hat: float
    var_g: float
    var_y_control: float
    var_y_treat: float
    sigma2_hat: float
    n: int
    degenerate: bool
    corr_y_g: float | None = None

    @property
    def dim_variance(self) -> float:
        return _dim_sigma2(self.var_y_control, self.var_y_treat, self.p_hat)


@dataclass(frozen=True)
class EstimateReport:
    """One estimator's result in the shape the CLI emits.

    ``ci_level`` is the confidence level ``1 - a`` (0.95 for ``a = 0.05``).
    ``degenerate`` is true when no adjustment took place, so the estimate
    is the plain difference in means.
    """

    method: str
    estimate: float
    std_error: float
    ci_level: float
    ci: tuple[float, float]
    n: int
    p_hat: float
    sigma2_hat: float
    degenerate: bool
    diagnostics: dict = field(default_factory=dict)

    @property
    def width(self) -> float:
        return self.ci[1] - self.ci[0]

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "estimate": self.estimate,
            "std_error": self.std_error,
            "ci_level": self.ci_level,
            "ci": [self.ci[0], self.ci[1]],
            "n": self.n,
            "p_hat": self.p_hat,
            "sigma2_hat": self.sigma2_hat,
            "degenerate": self.degenerate,
            "diagnostics": {
                "corr_y_g": self.diagnostics.get("corr_y_g"),
                "var_g": self.diagnostics.get("var_g"),
            },
        }

    def renamed(self, method: str) -> "EstimateReport":
        return EstimateReport(method, self.estimate, self.std_error, self.ci_level, self.ci,
                              self.n, self.p_hat, self.sigma2_hat, self.degenerate,
                              dict(self.diagnostics))


def _check_arms(y: np.ndarray, t: np.ndarray, min_per_arm: int = 2):
    if y.ndim != 1 or t.shape != y.shape:
        raise InvalidArgumentError("outcome and treatment must be vectors of equal length")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(t))):
        raise InvalidArgumentError("outcome and treatment must be finite")
    if not np.all((t == 0) | (t == 1)):
        raise InvalidArgumentError("treatment must be 0/1")
    n1 = int(np.count_nonzero(t))
    n0 = t.shape[0] - n1
    if n1 < min_per_arm or n0 < min_per_arm:
        raise InvalidArgumentError(
            f"each arm needs at least {min_per_arm} rows (treated={n1}, control={n0})"
        )
    return t == 1


def _dim_sigma2(var0: float, var1: float, p: float) -> float:
    return var0 / (1.0 - p) + var1 / p


def _arm_moments(y: np.ndarray, t: np.ndarray):
    treated = _check_arms(y, t)
    p = float(np.count_nonzero(treated)) / y.shape[0]
    y1 = y[treated]
    y0 = y[~treated]
    diff = float(y1.mean() - y0.mean())
    return diff, p, sample_variance(y0), sample_variance(y1)


def variance_estimator(var_y_control: float, var_y_treat: float, p_hat: float, var_g: float,
                       beta2: float, beta3: float, degenerate: bool = False) -> float:
    """Plug-in asymptotic variance of the adjusted estimator (scaled by n).

    The reduction term vanishes on the degenerate path; the result is floored
    at zero against rounding when the fit is near perfect.
    """
    if not 0.0 < p_hat < 1.0:
        raise InvalidArgumentError("p_hat must lie strictly between 0 and 1")
    base = _dim_sigma2(var_y_control, var_y_treat, p_hat)
    if degenerate:
        reduction = 0.0
    else:
        slope = beta2 * p_hat + (beta2 + beta3) * (1.0 - p_hat)
        reduction = var_g / (p_hat * (1.0 - p_hat)) * slope * slope
    return max(base - reduction, 0.0)


def adjusted_fit(y, t, g) -> AdjustmentFit:
    """Regression-adjusted ATE using ``g`` as the single adjustment covariate.

    When ``g`` is (numerically) constant, or its column is dropped by the
    rank check, the design is degenerate: the estimate falls back to the
    difference in means and the variance to its unadjusted form.
    """
    y = np.asarray(y, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if g.shape != y.shape:
        raise InvalidArgumentError("g must have one entry per row")
    if y.shape[0] < 4:
        raise InvalidArgumentError("adjusted_fit needs at least 4 rows")
    if not np.all(np.isfinite(g)):
        raise InvalidArgumentError("g contains non-finite values")
    diff, p, var0, var1 = _arm_moments(y, t)
    n = y.shape[0]
    g_bar = float(g.mean())
    var_g = sample_variance(g)
    var_y = sample_variance(y)

    degenerate = var_g <= DEGENERATE_RTOL * var_y
    beta = np.zeros(4)
    if not degenerate:
        design = np.column_stack([np.ones(n), t, g, t * g])
        beta, rank = least_squares(design, y)
        degenerate = rank < 4
    if degenerate:
        alpha1 = diff
        beta = np.zeros(4)
    else:
        alpha1 = float(beta[1] + beta[3] * g_bar)
    sigma2 = variance_estimator(var0, var1, p, var_g, beta[2], beta[3], degenerate)
    corr = None if degenerate else sample_correlation(y, g)
    return AdjustmentFit(beta, alpha1, g_bar, p, var_g, var0, var1, sigma2, n, bool(degenerate),
                         corr)


def confidence_interval(estimate: float, sigma2: float, n: int, alpha: float = 0.05):
    """Two-sided normal interval ``estimate +/- z_{1-alpha/2} * sqrt(sigma2 / n)``."""
    if not 0.0 < alpha < 1.0:
        raise InvalidArgumentError("alpha must lie strictly between 0 and 1")
    if sigma2 < 0 or n < 1:
        raise InvalidArgumentError("need sigma2 >= 0 and n >= 1")
    half = normal_quantile(1.0 - alpha / 2.0) * math.sqrt(sigma2 / n)
    return (estimate - half, estimate + half)


def _report(method, estimate, sigma2, n, p, alpha, degenerate, corr=None, var_g=None):
    lo, hi = confidence_interval(estimate, sigma2, n, alpha)
    return EstimateReport(
        method=method,
        estimate=float(estimate),
        std_error=math.sqrt(sigma2 / n),
        ci_level=1.0 - alpha,
        ci=(lo, hi),
        n=int(n),
        p_hat=float(p),
        sigma2_hat=float(sigma2),
        degenerate=bool(degenerate),
        diagnostics={"corr_y_g": corr, "var_g": var_g},
    )


def report_from_fit(fit: AdjustmentFit, method: str, alpha: float = 0.05) -> EstimateReport:
    var_g = fit.var_g if not fit.degenerate else 0.0
    return _report(method, fit.alpha1, fit.sigma2_hat, fit.n, fit.p_hat, alpha, fit.degenerate,
                   fit.corr_y_g, var_g)


def diff_in_means(y, t, alpha: float = 0.05, method: str = "dim") -> EstimateReport:
    """Unadjusted difference of arm means with its unadjusted variance."""
    y = np.asarray(y, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    diff, p, var0, var1 = _arm_moments(y, t)
    sigma2 = variance_estimator(var0, var1, p, 0.0, 0.0, 0.0, degenerate=True)
    return _report(method, diff, sigma2, y.shape[0], p, alpha, True, None, 0.0)


def diff_in_diff(y, t, g, alpha: float = 0.05, method: str = "dind") -> EstimateReport:
    """Difference in means of ``Y - g``: subtract the prediction instead of regressing on it."""
    y = np.asarray(y, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if g.shape != y.shape:
        raise InvalidArgumentError("g must have one entry per row")
    rep = diff_in_means(y - g, t, alpha, method)
    var_g = sample_variance(g)
    return EstimateReport(rep.method, rep.estimate, rep.std_error, rep.ci_level, rep.ci, rep.n,
                          rep.p_hat, rep.sigma2_hat, False,
                          {"corr_y_g": sample_correlation(y, g), "var_g": var_g})


def cuped_estimate(panel: PanelDataset, alpha: float = 0.05, method: str = "cuped"):
    """Linear adjustment for the pre-experiment value of the outcome alone."""
    fit = adjusted_fit(panel.data.outcome, panel.data.treatment, panel.y_pre)
    return report_from_fit(fit, method, alpha)


def censor_predictions(g, tau: float | None) -> np.ndarray:
    """Hard threshold ``u * 1{u >= tau}``; ``None`` or ``-inf`` leaves ``g`` unchanged."""
    g = np.asarray(g, dtype=np.float64)
    if tau is None or tau == -math.inf:
        return g.copy()
    if not math.isfinite(tau):
        raise InvalidArgumentError("censoring threshold must be finite (or -inf to disable)")
    return np.where(g >= tau, g, 0.0)


def mlrate_estimate(
    ds: ExperimentDataset,
    spec: LearnerSpec,
    k: int = 2,
    stream: RandomStream | None = None,
    alpha: float = 0.05,
    censor_tau: float | None = None,
    *,
    features=None,
    method: str | None = None,
    auxiliary: ExperimentDataset | None = None,
    parallelism: int = 1,
    return_crossfit: bool = False,
):
    """Cross-fit ``spec``, optionally censor the predictions, then adjust.

    Returns an :class:`EstimateReport` (and the :class:`CrossFitResult` when
    ``return_crossfit`` is set).
    """
    cf = cross_fit(ds, spec, k, stream if stream is not None else RandomStream(0),
                   features, auxiliary=auxiliary, parallelism=parallelism)
    g = censor_predictions(cf.predictions, censor_tau)
    fit = adjusted_fit(ds.outcome, ds.treatment, g)
    rep = report_from_fit(fit, method or f"mlrate-{spec.kind}", alpha)
    return (rep, cf) if return_crossfit else rep


def relative_efficiency(a: EstimateReport, b: EstimateReport) -> tuple[float, float]:
    """(variance ratio, CI width ratio) of ``a`` over ``b``."""
    if a.n != b.n or abs(a.ci_level - b.ci_level) > 1e-15:
        raise InvalidArgumentError("relative efficiency needs reports with equal n and level")
    if b.sigma2_hat == 0.0 or b.width == 0.0:
        raise InvalidArgumentError("reference report has zero width")
    return a.sigma2_hat / b.sigma2_hat, a.width / b.width


__all__ = [
    "AdjustmentFit", "EstimateReport", "CrossFitResult", "adjusted_fit", "variance_estimator",
    "confidence_interval", "diff_in_means", "diff_in_diff", "cuped_estimate",
    "censor_predictions", "mlrate_estimate", "relative_efficiency", "report_from_fit",
]
