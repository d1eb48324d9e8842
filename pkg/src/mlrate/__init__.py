"""Machine-learning regression-adjusted treatment effect estimation.

Cross-fitted predictions from any supervised learner serve as the covariate
in a treatment-interacted linear adjustment of the difference in means.
"""

__version__ = "0.1.0"

from .data import ExperimentDataset, PanelDataset, load_csv, split_folds, validate, write_csv
from .crossfit import CrossFitResult, cross_fit, preperiod_fit
from .estimators import (
    AdjustmentFit,
    EstimateReport,
    adjusted_fit,
    censor_predictions,
    confidence_interval,
    cuped_estimate,
    diff_in_diff,
    diff_in_means,
    mlrate_estimate,
    relative_efficiency,
    variance_estimator,
)
from .learners import LearnerSpec, predict, train
from .numerics import RandomStream, normal_cdf, normal_quantile

__all__ = [
    "ExperimentDataset", "PanelDataset", "load_csv", "write_csv", "validate", "split_folds",
    "CrossFitResult", "cross_fit", "preperiod_fit", "AdjustmentFit", "EstimateReport",
    "adjusted_fit", "censor_predictions", "confidence_interval", "cuped_estimate",
    "diff_in_diff", "diff_in_means", "mlrate_estimate", "relative_efficiency",
    "variance_estimator", "LearnerSpec", "predict", "train", "RandomStream", "normal_cdf",
    "normal_quantile",
]
