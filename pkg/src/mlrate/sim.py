"""Monte Carlo laboratory: data generators, closed-form oracles and coverage studies.

Two generators are provided. The Friedman design has a nonlinear baseline
``b(X)``, heterogeneous effect ``tau(X)`` and heavy noise, with 100 mostly
irrelevant Gaussian covariates. The A/A panel is a synthetic stand-in for
logged product metrics: a latent user trait drives a metric across three
periods (t-2, t-1, t) with a tunable period-to-period correlation, plus
auxiliary pre-period metrics; treatment has no effect.
"""

from __future__ import annotations

import csv
import functools
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import ExperimentDataset, PanelDataset
from .estimators import (
    EstimateReport,
    adjusted_fit,
    cuped_estimate,
    diff_in_diff,
    diff_in_means,
    mlrate_estimate,
    report_from_fit,
)
from .crossfit import cross_fit, preperiod_fit
from .exceptions import InvalidArgumentError, StudyFailedError
from .learners import LearnerSpec, register_function
from .numerics import RandomStream, normal_quantile

logger = logging.getLogger(__name__)

GH_NODES = 64


def friedman_b(x) -> np.ndarray | float:
    """Friedman baseline ``10 sin(pi x1 x2) + 20 (x3 - 0.5)^2 + 10 x4 + 5 x5``.

    Accepts one row or a matrix of rows; only the first five entries are read.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape[-1] < 5:
        raise InvalidArgumentError("the Friedman function needs at least 5 covariates")
    x1, x2, x3, x4, x5 = (arr[..., j] for j in range(5))
    out = 10.0 * np.sin(np.pi * x1 * x2) + 20.0 * (x3 - 0.5) ** 2 + 10.0 * x4 + 5.0 * x5
    return float(out) if out.ndim == 0 else out


def softplus(z):
    z = np.asarray(z, dtype=np.float64)
    big = z > 30.0
    safe = np.where(big, 0.0, z)
    out = np.where(big, z + np.log1p(np.exp(-np.abs(z))), np.log1p(np.exp(safe)))
    return float(out) if out.ndim == 0 else out


def friedman_tau(x) -> np.ndarray | float:
    """Treatment effect ``x1 + log(1 + exp(x2))``, overflow-safe."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape[-1] < 2:
        raise InvalidArgumentError("the effect function needs at least 2 covariates")
    out = arr[..., 0] + softplus(arr[..., 1])
    return float(out) if np.ndim(out) == 0 else out


register_function("friedman-b", friedman_b)


def _gauss_hermite_expect(fn, nodes: int = GH_NODES) -> float:
    """E[fn(Z)] for Z ~ N(0, 1) by probabilists' Gauss-Hermite quadrature."""
    z, w = np.polynomial.hermite_e.hermegauss(nodes)
    return float(np.sum(w * fn(z)) / math.sqrt(2.0 * math.pi))


@functools.lru_cache(maxsize=None)
def true_ate_friedman(nodes: int = GH_NODES) -> float:
    """E[tau(X)] = E[softplus(Z)] since E[X1] = 0."""
    return _gauss_hermite_expect(softplus, nodes)


@functools.lru_cache(maxsize=None)
def tau_variance_friedman(nodes: int = GH_NODES) -> float:
    """Var(tau(X)) = Var(X1) + Var(softplus(X2)) for independent standard normals."""
    m1 = _gauss_hermite_expect(softplus, nodes)
    m2 = _gauss_hermite_expect(lambda z: softplus(z) ** 2, nodes)
    return 1.0 + (m2 - m1 * m1)


def efficiency_bound_friedman(noise_sd: float = 25.0, treat_prob: float = 0.5,
                              heterogeneous: bool = True) -> float:
    """Semiparametric variance bound (times n) for the ATE under the Friedman design.

    Conditional outcome variances are the homoskedastic noise variance, so
    the bound is ``noise_sd^2 (1/p + 1/(1-p)) + Var(tau(X))``; with
    ``heterogeneous=False`` the effect is constant and the last term is 0.
    """
    if noise_sd < 0 or not 0.0 < treat_prob < 1.0:
        raise InvalidArgumentError("need noise_sd >= 0 and 0 < treat_prob < 1")
    var_tau = tau_variance_friedman() if heterogeneous else 0.0
    return noise_sd ** 2 * (1.0 / treat_prob + 1.0 / (1.0 - treat_prob)) + var_tau


@dataclass(frozen=True)
class FriedmanDgpConfig:
    n: int = 10_000
    d: int = 100
    noise_sd: float = 25.0
    treat_prob: float = 0.5

    name = "friedman"

    def __post_init__(self):
        if self.d < 5:
            raise InvalidArgumentError("the Friedman design needs d >= 5")
        if self.noise_sd < 0 or not 0.0 <= self.treat_prob <= 1.0 or self.n < 1:
            raise InvalidArgumentError("invalid Friedman configuration")

    @property
    def true_ate(self) -> float:
        return true_ate_friedman()

    def generate(self, stream: RandomStream) -> ExperimentDataset:
        return generate_friedman(self, stream)


def generate_friedman(cfg: FriedmanDgpConfig, stream: RandomStream) -> ExperimentDataset:
    """Draw X ~ N(0, I_d), T ~ Bernoulli(p), u ~ N(0, noise_sd^2); Y = b(X) + T tau(X) + u."""
    X = stream.substream(0).normal((cfg.n, cfg.d))
    T = stream.substream(1).bernoulli(cfg.treat_prob, cfg.n)
    u = stream.substream(2).normal(cfg.n) * cfg.noise_sd
    y = friedman_b(X) + T * friedman_tau(X) + u
    return ExperimentDataset(y, T, X, tuple(f"x{j + 1}" for j in range(cfg.d)))


AA_FAMILIES = ("gaussian", "heavy-tailed", "count-like")

# nonlinear links from the latent trait to auxiliary metrics, cycled by index
_AUX_LINKS = (
    lambda u: np.tanh(1.5 * u),
    lambda u: np.exp(0.5 * u),
    lambda u: u * np.abs(u),
    lambda u: u,
)


@dataclass(frozen=True)
class AaPanelConfig:
    """A/A panel: ``metric_s = sqrt(rho) * trait + sqrt(1 - rho) * shock_s``.

    For the gaussian family the correlation between any two periods of the
    metric is exactly ``rho``. ``heavy-tailed`` exponentiates the metric
    (log-normal, like revenue); ``count-like`` floors ``exp`` of it, giving
    non-negative integers with a large mass at zero.
    """

    n: int = 10_000
    rho: float = 0.5
    n_aux: int = 0
    family: str = "gaussian"
    treat_prob: float = 0.5
    aux_noise_sd: float = 1.0

    name = "aa-panel"
    true_ate = 0.0

    def __post_init__(self):
        if not 0.0 <= self.rho < 1.0:
            raise InvalidArgumentError("rho must lie in [0, 1)")
        if self.family not in AA_FAMILIES:
            raise InvalidArgumentError(f"family must be one of {AA_FAMILIES}")
        if self.n < 1 or self.n_aux < 0:
            raise InvalidArgumentError("invalid A/A panel configuration")

    def generate(self, stream: RandomStream) -> PanelDataset:
        return generate_aa_panel(self, stream)


def _family(z: np.ndarray, family: str) -> np.ndarray:
    if family == "gaussian":
        return z
    if family == "heavy-tailed":
        return np.exp(z)
    return np.floor(np.exp(z))


def generate_aa_panel(cfg: AaPanelConfig, stream: RandomStream) -> PanelDataset:
    """Generate a three-period panel with treatment independent of everything.

    Covariates of the experiment dataset are the t-1 metric followed by the
    t-1 auxiliary metrics; the same columns at t-2 form ``lag_features``.
    """
    n = cfg.n
    trait = stream.substream(0).normal(n)
    shocks = stream.substream(1).normal((3, n))
    a, b = math.sqrt(cfg.rho), math.sqrt(1.0 - cfg.rho)
    y_lag2, y_pre, y_now = (_family(a * trait + b * shocks[s], cfg.family) for s in range(3))
    aux_noise = stream.substream(2).normal((2, n, max(cfg.n_aux, 1)))
    aux = []
    for s in range(2):
        cols = [_AUX_LINKS[m % len(_AUX_LINKS)](trait) + cfg.aux_noise_sd * aux_noise[s, :, m]
                for m in range(cfg.n_aux)]
        aux.append(np.column_stack(cols) if cols else np.empty((n, 0)))
    T = stream.substream(3).bernoulli(cfg.treat_prob, n)
    pre = np.column_stack([y_pre, aux[1]])
    lag = np.column_stack([y_lag2, aux[0]])
    names = ("y_pre", *(f"aux{m + 1}_pre" for m in range(cfg.n_aux)))
    base = ExperimentDataset(y_now, T, pre, names)
    return PanelDataset(base, y_pre, pre_features=pre, lag_features=lag)


@dataclass(frozen=True)
class MethodConfig:
    """One estimator to run in every repetition of a study.

    ``kind`` is ``mlrate``, ``dim``, ``dind`` (difference of ``Y - g`` with a
    cross-fitted ``g``), ``cuped`` (panel data only) or ``preperiod`` (panel
    data only: a single pre-experiment model's predictions as the covariate).
    ``ci_scale`` multiplies interval half-widths; values other than 1 exist to
    check that a study detects miscalibrated intervals.
    """

    name: str
    kind: str = "mlrate"
    learner: LearnerSpec | None = None
    k: int = 2
    censor_tau: float | None = None
    ci_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("mlrate", "dim", "dind", "cuped", "preperiod"):
            raise InvalidArgumentError(f"unknown method kind {self.kind!r}")
        if self.kind in ("mlrate", "dind", "preperiod") and self.learner is None:
            raise InvalidArgumentError(f"method {self.name!r} needs a learner")


def run_method(method: MethodConfig, data, stream: RandomStream, alpha: float = 0.05
               ) -> EstimateReport:
    """Apply one configured estimator to a generated dataset or panel."""
    panel = data if isinstance(data, PanelDataset) else None
    ds = panel.data if panel is not None else data
    if method.kind == "dim":
        rep = diff_in_means(ds.outcome, ds.treatment, alpha, method.name)
    elif method.kind == "mlrate":
        rep = mlrate_estimate(ds, method.learner, method.k, stream, alpha, method.censor_tau,
                              method=method.name)
    elif method.kind == "dind":
        cf = cross_fit(ds, method.learner, method.k, stream)
        rep = diff_in_diff(ds.outcome, ds.treatment, cf.predictions, alpha, method.name)
    elif method.kind == "cuped":
        if panel is None:
            raise InvalidArgumentError("cuped needs panel data with a pre-period outcome")
        rep = cuped_estimate(panel, alpha, method.name)
    else:
        if panel is None:
            raise InvalidArgumentError("preperiod needs panel data")
        g = preperiod_fit(panel, method.learner)
        rep = report_from_fit(adjusted_fit(ds.outcome, ds.treatment, g), method.name, alpha)
    if method.ci_scale != 1.0:
        half = 0.5 * rep.width * method.ci_scale
        rep = EstimateReport(rep.method, rep.estimate, rep.std_error, rep.ci_level,
                             (rep.estimate - half, rep.estimate + half), rep.n, rep.p_hat,
                             rep.sigma2_hat, rep.degenerate, rep.diagnostics)
    return rep


@dataclass(frozen=True)
class RepRecord:
    rep: int
    method: str
    estimate: float
    lower: float
    upper: float
    width: float
    sigma2_hat: float
    covered: bool
    failed: bool = False
    error: str = ""


@dataclass(frozen=True)
class MethodSummary:
    method: str
    reps_ok: int
    failures: int
    coverage: float
    coverage_ci: float
    mean_width: float
    mean_relative_width: float | None
    mean_sigma2: float
    flagged: bool


@dataclass
class CoverageStudyResult:
    dgp: str
    reps: int
    seed: int
    alpha: float
    true_ate: float
    baseline: str
    config: dict
    methods: list[MethodSummary]
    records: list[RepRecord] = field(repr=False, default_factory=list)

    def summary(self, method: str) -> MethodSummary:
        for m in self.methods:
            if m.method == method:
                return m
        raise KeyError(method)

    def to_dict(self, include_records: bool = False) -> dict:
        out = {
            "dgp": self.dgp,
            "reps": self.reps,
            "seed": self.seed,
            "alpha": self.alpha,
            "true_ate": self.true_ate,
            "baseline": self.baseline,
            "config": self.config,
            "methods": [asdict(m) for m in self.methods],
        }
        if include_records:
            out["records"] = [asdict(r) for r in self.records]
        return out

    def to_json(self, include_records: bool = False) -> str:
        return json.dumps(self.to_dict(include_records), indent=2)

    def write_records_csv(self, path) -> None:
        names = [f.name for f in RepRecord.__dataclass_fields__.values()]
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for r in self.records:
                w.writerow([repr(v) if isinstance(v, float) else v for v in astuple_ordered(r)])


def astuple_ordered(rec: RepRecord) -> tuple:
    return tuple(getattr(rec, f) for f in RepRecord.__dataclass_fields__)


def binomial_half_width(coverage: float, reps: int) -> float:
    """Half-width of the normal-approximation 95% interval for a coverage rate."""
    return 1.96 * math.sqrt(coverage * (1.0 - coverage) / reps) if reps > 0 else math.nan


def effective_parallelism(requested: int) -> int:
    """Cap ``requested`` workers by the ``MLRATE_THREADS`` environment variable."""
    requested = max(1, int(requested))
    cap = os.environ.get("MLRATE_THREADS")
    if cap:
        try:
            requested = min(requested, max(1, int(cap)))
        except ValueError:
            logger.warning("ignoring non-integer MLRATE_THREADS=%r", cap)
    return requested


def _one_rep(dgp, methods, rep, seed, alpha, true_ate):
    stream = RandomStream(seed, rep)
    data = dgp.generate(stream.substream(0))
    out = []
    for j, m in enumerate(methods):
        try:
            r = run_method(m, data, stream.substream(1 + j), alpha)
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            out.append(RepRecord(rep, m.name, math.nan, math.nan, math.nan, math.nan, math.nan,
                                 False, True, f"{type(exc).__name__}: {exc}"))
            continue
        lo, hi = r.ci
        out.append(RepRecord(rep, m.name, r.estimate, lo, hi, hi - lo, r.sigma2_hat,
                             bool(lo <= true_ate <= hi)))
    return out


def run_coverage_study(
    dgp,
    methods: Sequence[MethodConfig],
    reps: int,
    alpha: float = 0.05,
    parallelism: int = 1,
    seed: int = 0,
    baseline: str | None = "auto",
    max_failure_rate: float = 0.01,
    progress=None,
) -> CoverageStudyResult:
    """Run every method on ``reps`` independent datasets and summarize coverage.

    Repetition ``r`` draws from ``RandomStream(seed, r)``, so any single
    repetition can be replayed alone and the result does not depend on
    ``parallelism``. A method is ``flagged`` when its coverage falls outside
    the binomial three-sigma band around the nominal level ``1 - alpha``.
    Relative widths are taken against ``baseline``; the default ``"auto"``
    uses the method named ``dim`` when there is one.

    Raises
    ------
    StudyFailedError
        More than ``max_failure_rate`` of a method's repetitions failed.
    """
    if reps < 1:
        raise InvalidArgumentError("reps must be >= 1")
    methods = list(methods)
    names = [m.name for m in methods]
    if len(set(names)) != len(names):
        raise InvalidArgumentError("method names must be unique")
    if baseline == "auto":
        baseline = "dim" if "dim" in names else None
    if baseline is not None and baseline not in names:
        raise InvalidArgumentError(f"baseline {baseline!r} is not among the methods")
    true_ate = float(dgp.true_ate)
    workers = effective_parallelism(parallelism)

    def task(r):
        res = _one_rep(dgp, methods, r, seed, alpha, true_ate)
        if progress is not None:
            progress(r)
        return res

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_rep = list(pool.map(task, range(reps)))
    else:
        per_rep = [task(r) for r in range(reps)]

    records = [rec for rep_records in per_rep for rec in rep_records]
    nominal = 1.0 - alpha
    band = 3.0 * math.sqrt(nominal * (1.0 - nominal) / reps)
    base_width = {r.rep: r.width for r in records if r.method == baseline and not r.failed}
    summaries = []
    failed_methods = []
    for name in names:
        ok = [r for r in records if r.method == name and not r.failed]
        failures = reps - len(ok)
        if failures > max_failure_rate * reps:
            failed_methods.append(f"{name} ({failures}/{reps} failed)")
        cov = sum(r.covered for r in ok) / len(ok) if ok else math.nan
        rel = [r.width / base_width[r.rep] for r in ok
               if r.rep in base_width and base_width[r.rep] > 0]
        summaries.append(MethodSummary(
            method=name,
            reps_ok=len(ok),
            failures=failures,
            coverage=cov,
            coverage_ci=binomial_half_width(cov, len(ok)) if ok else math.nan,
            mean_width=float(np.mean([r.width for r in ok])) if ok else math.nan,
            mean_relative_width=float(np.mean(rel)) if rel else None,
            mean_sigma2=float(np.mean([r.sigma2_hat for r in ok])) if ok else math.nan,
            flagged=bool(ok) and abs(cov - nominal) > band,
        ))
    config = {"dgp": asdict(dgp), "methods": [_method_dict(m) for m in methods]}
    result = CoverageStudyResult(dgp.name, reps, seed, alpha, true_ate, baseline or "", config,
                                 summaries, records)
    if failed_methods:
        raise StudyFailedError("too many failed repetitions: " + ", ".join(failed_methods), result)
    return result


def _method_dict(m: MethodConfig) -> dict:
    return {
        "name": m.name,
        "kind": m.kind,
        "learner": m.learner.to_dict() if m.learner is not None else None,
        "k": m.k,
        "censor_tau": m.censor_tau,
        "ci_scale": m.ci_scale,
    }


def expected_halfwidth_coverage(scale: float, alpha: float = 0.05) -> float:
    """Coverage of a correctly centred normal interval whose half-width is scaled."""
    from .numerics import normal_cdf

    z = normal_quantile(1.0 - alpha / 2.0) * scale
    return float(2.0 * normal_cdf(z) - 1.0)
