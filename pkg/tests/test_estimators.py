import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from mlrate.data import ExperimentDataset, PanelDataset
from mlrate.estimators import (
    adjusted_fit,
    censor_predictions,
    confidence_interval,
    cuped_estimate,
    diff_in_diff,
    diff_in_means,
    mlrate_estimate,
    relative_efficiency,
    report_from_fit,
)
from mlrate.exceptions import InvalidArgumentError
from mlrate.learners import LearnerSpec, register_function
from mlrate.numerics import RandomStream, normal_quantile
from oracles import centered_alpha1, mlrate_oracle, var1

Y6 = [1, 2, 3, 4, 6, 7]
T6 = [0, 0, 0, 1, 1, 1]
G6 = [1, 2, 3, 4, 5, 6]


def _data(seed, n=None):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(8, 50))
    t = rng.permutation(np.r_[np.zeros(2), np.ones(2), rng.integers(0, 2, n - 4)])
    g = rng.normal(size=n) * rng.uniform(0.1, 10)
    y = 1 + 0.5 * t + rng.uniform(-2, 2) * g + rng.uniform(-1, 1) * t * g + rng.normal(size=n)
    return y, t, g


# --------------------------------------------------------------- adjusted_fit


def test_six_row_example_against_oracle():
    fit = adjusted_fit(Y6, T6, G6)
    a, s2, b = mlrate_oracle(Y6, T6, G6)
    assert not fit.degenerate
    assert fit.alpha1 == pytest.approx(a, rel=1e-10)
    assert fit.sigma2_hat == pytest.approx(s2, rel=1e-10, abs=1e-12)
    np.testing.assert_allclose(fit.beta, b, rtol=1e-9, atol=1e-12)


def test_six_row_frozen_values():
    # by hand in exact fractions: control arm fits y = g, treated arm fits
    # y = -11/6 + 3/2 g, so alpha1 = -11/6 + (1/2)(7/2) = -1/12; the raw variance
    # 1/(1/2) + (7/3)/(1/2) - 3.5/(1/4) * (1/2 + 3/4)^2 = 20/3 - 21.875 < 0 is floored
    fit = adjusted_fit(Y6, T6, G6)
    assert fit.alpha1 == pytest.approx(-1 / 12, rel=1e-12)
    np.testing.assert_allclose(fit.beta, [0.0, -11 / 6, 1.0, 0.5], rtol=1e-12, atol=1e-12)
    assert fit.sigma2_hat == 0.0


def test_zero_g_is_degenerate():
    y, t, _ = _data(1)
    fit = adjusted_fit(y, t, np.zeros_like(y))
    assert fit.degenerate
    assert fit.alpha1 == pytest.approx(y[t == 1].mean() - y[t == 0].mean(), rel=1e-13)
    dim = diff_in_means(y, t)
    assert fit.sigma2_hat == dim.sigma2_hat


def test_collinear_with_treatment_is_degenerate():
    y, t, _ = _data(2)
    fit = adjusted_fit(y, t, 3 * t + 1)
    assert fit.degenerate
    assert fit.alpha1 == pytest.approx(y[t == 1].mean() - y[t == 0].mean())


def test_affine_g():
    y, t, g = _data(3)
    a = adjusted_fit(y, t, g)
    b = adjusted_fit(y, t, 5 * g + 3)
    assert b.alpha1 == pytest.approx(a.alpha1, rel=1e-9, abs=1e-12)
    assert b.sigma2_hat == pytest.approx(a.sigma2_hat, rel=1e-9)


@pytest.mark.parametrize("bad", [
    (Y6[:3], T6[:3], G6[:3]),
    (Y6, [1] * 6, G6),
    (Y6, T6, G6[:5]),
    (Y6, [0, 0, 0, 0, 0, 1], G6),
])
def test_adjusted_fit_rejects(bad):
    with pytest.raises(InvalidArgumentError):
        adjusted_fit(*bad)


def test_invariants_fields():
    y, t, g = _data(4)
    fit = adjusted_fit(y, t, g)
    assert 0 < fit.p_hat < 1
    assert fit.sigma2_hat >= 0
    assert fit.sigma2_hat <= fit.var_y_control / (1 - fit.p_hat) + fit.var_y_treat / fit.p_hat
    assert fit.var_y_control == pytest.approx(var1(y[t == 0]))
    assert fit.g_bar == pytest.approx(g.mean())


def test_orthogonal_g_gives_dim_variance():
    # g orthogonal to Y within each arm, and within-arm centered: both slopes vanish
    y = np.array([1.0, 3.0, 1.0, 3.0, 5.0, 7.0, 5.0, 7.0])
    t = np.array([0, 0, 0, 0, 1, 1, 1, 1.0])
    g = np.array([1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0])
    fit = adjusted_fit(y, t, g)
    assert abs(fit.beta[2]) < 1e-12 and abs(fit.beta[3]) < 1e-12
    assert fit.sigma2_hat == pytest.approx(diff_in_means(y, t).sigma2_hat, rel=1e-12)


# ---------------------------------------------------------------- properties


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31))
def test_oracle_equivalence(seed):
    y, t, g = _data(seed)
    fit = adjusted_fit(y, t, g)
    a, s2, _ = mlrate_oracle(y, t, g)
    assert fit.alpha1 == pytest.approx(a, rel=1e-9, abs=1e-12)
    assert fit.sigma2_hat == pytest.approx(s2, rel=1e-9, abs=1e-12)
    assert fit.alpha1 == pytest.approx(centered_alpha1(y, t, g), rel=1e-9, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31), st.floats(-100, 100), st.floats(0.01, 100))
def test_invariances(seed, c, s):
    y, t, g = _data(seed)
    base = adjusted_fit(y, t, g)
    swapped = adjusted_fit(y, 1 - t, g)
    assert swapped.alpha1 == pytest.approx(-base.alpha1, rel=1e-9, abs=1e-9)
    assert swapped.sigma2_hat == pytest.approx(base.sigma2_hat, rel=1e-9, abs=1e-9)
    shifted = adjusted_fit(y + c, t, g)
    assert shifted.alpha1 == pytest.approx(base.alpha1, rel=1e-8, abs=1e-8)
    assert shifted.sigma2_hat == pytest.approx(base.sigma2_hat, rel=1e-8, abs=1e-8)
    scaled = adjusted_fit(s * y, t, g)
    assert scaled.alpha1 == pytest.approx(s * base.alpha1, rel=1e-9, abs=1e-9)
    assert scaled.sigma2_hat == pytest.approx(s * s * base.sigma2_hat, rel=1e-9, abs=1e-9)
    affine = adjusted_fit(y, t, -s * g + c)
    assert affine.alpha1 == pytest.approx(base.alpha1, rel=1e-8, abs=1e-8)
    assert affine.sigma2_hat == pytest.approx(base.sigma2_hat, rel=1e-8, abs=1e-8)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(["noise", "outcome", "treat", "heavy", "const"]))
def test_non_inferiority(seed, kind):
    y, t, g = _data(seed)
    rng = np.random.default_rng(seed + 1)
    g = {"noise": rng.normal(size=len(y)), "outcome": y, "treat": y * t,
         "heavy": rng.standard_cauchy(size=len(y)), "const": np.full(len(y), 2.0)}[kind]
    assert adjusted_fit(y, t, g).sigma2_hat <= diff_in_means(y, t).sigma2_hat


# -------------------------------------------------------------- intervals


def test_confidence_interval_examples():
    assert confidence_interval(1.5, 0.0, 10) == (1.5, 1.5)
    lo, hi = confidence_interval(0.0, 1.0, 100, 0.05)
    assert hi == pytest.approx(0.1959963985, abs=1e-10)
    assert lo == -hi
    wide = confidence_interval(0.0, 1.0, 100, 0.05)
    narrow = confidence_interval(0.0, 1.0, 100, 0.32)
    assert wide[0] < narrow[0] and narrow[1] < wide[1]


@pytest.mark.parametrize("args", [(0, -1.0, 10, 0.05), (0, 1.0, 0, 0.05), (0, 1.0, 10, 0.0),
                                  (0, 1.0, 10, 1.0)])
def test_confidence_interval_rejects(args):
    with pytest.raises(InvalidArgumentError):
        confidence_interval(*args)


def test_report_width_identity():
    y, t, g = _data(5)
    rep = report_from_fit(adjusted_fit(y, t, g), "m", 0.1)
    assert rep.ci[0] <= rep.estimate <= rep.ci[1]
    assert rep.width == pytest.approx(2 * normal_quantile(0.95) * rep.std_error, rel=1e-12)
    assert rep.std_error == pytest.approx(math.sqrt(rep.sigma2_hat / rep.n))
    d = rep.to_dict()
    assert set(d) == {"method", "estimate", "std_error", "ci_level", "ci", "n", "p_hat",
                      "sigma2_hat", "degenerate", "diagnostics"}
    assert set(d["diagnostics"]) == {"corr_y_g", "var_g"}
    assert d["ci_level"] == pytest.approx(0.9)


# ---------------------------------------------------------------- baselines


def test_diff_in_means_examples():
    t = np.array([0, 0, 1, 1, 0, 1.0])
    rep = diff_in_means(t, t)
    assert rep.estimate == 1.0 and rep.sigma2_hat == 0.0
    assert diff_in_means(np.full(6, 3.0), t).estimate == 0.0
    assert diff_in_means([1, 2, 3, 4], [0, 0, 1, 1]).estimate == 2.0
    with pytest.raises(InvalidArgumentError):
        diff_in_means([1, 2, 3], [0, 1, 1])


def test_diff_in_diff_examples():
    y, t, g = _data(6)
    a, b = diff_in_diff(y, t, np.zeros_like(y)), diff_in_means(y, t)
    assert a.estimate == b.estimate and a.sigma2_hat == b.sigma2_hat
    assert diff_in_diff(y, t, y).estimate == 0.0
    rep = diff_in_diff(y, t, y - t)
    assert rep.estimate == pytest.approx(1.0, abs=1e-12)
    assert rep.sigma2_hat == pytest.approx(0.0, abs=1e-20)


def test_cuped():
    y, t, g = _data(7)
    ds = ExperimentDataset(y, t, np.zeros((len(y), 0)))
    flat = cuped_estimate(PanelDataset(ds, np.full(len(y), 4.0)))
    assert flat.degenerate and flat.estimate == pytest.approx(diff_in_means(y, t).estimate)
    rep = cuped_estimate(PanelDataset(ds, g))
    assert rep.estimate == pytest.approx(adjusted_fit(y, t, g).alpha1)


def test_censor_predictions():
    g = np.array([-1.0, 0.5, 2.0])
    np.testing.assert_array_equal(censor_predictions(g, 1.0), [0.0, 0.0, 2.0])
    np.testing.assert_array_equal(censor_predictions(g, -math.inf), g)
    np.testing.assert_array_equal(censor_predictions(g, None), g)
    pos = np.abs(g)
    np.testing.assert_array_equal(censor_predictions(pos, 0.0), pos)
    with pytest.raises(InvalidArgumentError):
        censor_predictions(g, math.nan)


def test_relative_efficiency():
    y, t, g = _data(8, n=40)
    a = report_from_fit(adjusted_fit(y, t, g), "a")
    assert relative_efficiency(a, a) == (1.0, 1.0)
    b = diff_in_means(y, t)
    v, w = relative_efficiency(a, b)
    assert w == pytest.approx(math.sqrt(v), rel=1e-12)
    with pytest.raises(InvalidArgumentError):
        relative_efficiency(a, diff_in_means(np.full(40, 1.0), t))
    with pytest.raises(InvalidArgumentError):
        relative_efficiency(a, diff_in_means(y, t, alpha=0.1))


def test_relative_efficiency_correlation_half():
    rng = np.random.default_rng(9)
    n = 10_000
    ratios = []
    for _ in range(20):
        g = rng.normal(size=n)
        y = 0.5 * g + math.sqrt(0.75) * rng.normal(size=n)
        t = (rng.uniform(size=n) < 0.5).astype(float)
        fit = report_from_fit(adjusted_fit(y, t, g), "adj")
        ratios.append(relative_efficiency(fit, diff_in_means(y, t))[1])
    assert np.mean(ratios) == pytest.approx(math.sqrt(0.75), abs=0.02)


# ------------------------------------------------------------- end to end


def _friedman_like(n=400, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 5))
    t = (rng.uniform(size=n) < 0.5).astype(float)
    y = 3 * X[:, 0] + np.sin(X[:, 1]) + t + rng.normal(size=n)
    return ExperimentDataset(y, t, X)


def test_fixed_function_equals_precomputed():
    register_function("three-x1", lambda X: 3 * X[:, 0])
    ds = _friedman_like()
    rep = mlrate_estimate(ds, LearnerSpec(kind="fixed-function", function="three-x1"), 2, RandomStream(0))
    fit = adjusted_fit(ds.outcome, ds.treatment, 3 * ds.covariates[:, 0])
    assert rep.estimate == fit.alpha1 and rep.sigma2_hat == fit.sigma2_hat


def test_zero_learner_equals_dim():
    ds = _friedman_like()
    rep = mlrate_estimate(ds, LearnerSpec(kind="zero"), 2, RandomStream(0))
    dim = diff_in_means(ds.outcome, ds.treatment)
    assert rep.renamed("dim").to_dict() == dim.to_dict()


def test_mlrate_gbdt_shrinks_interval():
    ds = _friedman_like(2000)
    rep, cf = mlrate_estimate(ds, LearnerSpec(), 2, RandomStream(1), return_crossfit=True)
    assert rep.method == "mlrate-gbdt"
    assert relative_efficiency(rep, diff_in_means(ds.outcome, ds.treatment))[1] < 0.5
    assert rep.diagnostics["corr_y_g"] > 0.8
    assert cf.k == 2


def test_censoring_applied_before_adjustment():
    ds = _friedman_like()
    spec = LearnerSpec(kind="fixed-function", function="three-x1")
    rep = mlrate_estimate(ds, spec, 2, RandomStream(0), censor_tau=0.5)
    g = 3 * ds.covariates[:, 0]
    fit = adjusted_fit(ds.outcome, ds.treatment, np.where(g >= 0.5, g, 0.0))
    assert rep.estimate == fit.alpha1
