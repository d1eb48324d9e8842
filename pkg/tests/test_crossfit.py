import numpy as np
import pytest

from mlrate.crossfit import CrossFitResult, cross_fit, preperiod_fit
from mlrate.data import ExperimentDataset, PanelDataset, split_folds
from mlrate.exceptions import InvalidArgumentError, SchemaError
from mlrate.learners import LearnerSpec, predict, train
from mlrate.numerics import RandomStream, sample_correlation
from mlrate.sim import AaPanelConfig, generate_aa_panel


def _ds(n=40, d=3, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    t = np.r_[0.0, 1.0, rng.integers(0, 2, n - 2)]
    y = X[:, 0] + 2 * t + rng.normal(size=n)
    return ExperimentDataset(y, t, X)


def test_constant_mean_two_folds():
    ds = _ds()
    cf = cross_fit(ds, LearnerSpec(kind="constant-mean"), 2, RandomStream(1))
    for f in (0, 1):
        other = ds.outcome[cf.folds != f].mean()
        np.testing.assert_allclose(cf.predictions[cf.folds == f], other, rtol=1e-15)


def test_leave_one_out_closed_form():
    ds = _ds(n=12)
    cf = cross_fit(ds, LearnerSpec(kind="constant-mean"), 12, RandomStream(0))
    y = ds.outcome
    np.testing.assert_allclose(cf.predictions, (y.sum() - y) / 11, rtol=1e-13)


def test_zero_learner():
    cf = cross_fit(_ds(), LearnerSpec(kind="zero"), 2, RandomStream(0))
    assert np.all(cf.predictions == 0) and cf.g_bar == 0.0


def test_g_bar_exact():
    cf = cross_fit(_ds(), LearnerSpec(n_trees=10), 3, RandomStream(2))
    assert cf.g_bar == float(cf.predictions.mean())
    assert cf.predictions.shape == (40,)
    assert len(cf.models) == 3


def test_treatment_never_a_feature():
    ds = _ds()
    flipped = ExperimentDataset(ds.outcome, 1 - ds.treatment, ds.covariates)
    a = cross_fit(ds, LearnerSpec(n_trees=10), 2, RandomStream(3))
    b = cross_fit(flipped, LearnerSpec(n_trees=10), 2, RandomStream(3))
    np.testing.assert_array_equal(a.predictions, b.predictions)
    assert a.models[0].n_features == ds.d


@pytest.mark.parametrize("spec", [LearnerSpec(n_trees=8), LearnerSpec(kind="elastic-net", penalty=0.05)])
def test_leakage_fold_rows_never_enter_training(spec):
    ds = _ds(n=60)
    folds = split_folds(60, 3, RandomStream(4))
    honest = cross_fit(ds, spec, 3, folds=folds)
    for k in range(3):
        y = ds.outcome.copy()
        y[folds == k] += 1e6
        corrupt = ExperimentDataset(y, ds.treatment, ds.covariates)
        cf = cross_fit(corrupt, spec, 3, folds=folds)
        np.testing.assert_array_equal(cf.predictions[folds == k], honest.predictions[folds == k])
        # and model k equals one trained on the honest complement alone
        ref = train(spec, ds.covariates[folds != k], ds.outcome[folds != k])
        np.testing.assert_array_equal(predict(ref, ds.covariates), predict(cf.models[k], ds.covariates))


def test_permutation_invariance():
    ds = _ds(n=50)
    folds = split_folds(50, 2, RandomStream(5))
    perm = np.random.default_rng(1).permutation(50)
    spec = LearnerSpec(n_trees=10)
    a = cross_fit(ds, spec, 2, folds=folds)
    b = cross_fit(ds.take(perm), spec, 2, folds=folds[perm])
    np.testing.assert_allclose(b.predictions, a.predictions[perm], rtol=1e-12, atol=1e-12)


def test_parallel_equals_serial():
    ds = _ds(n=80)
    a = cross_fit(ds, LearnerSpec(n_trees=10), 4, RandomStream(6), parallelism=1)
    b = cross_fit(ds, LearnerSpec(n_trees=10), 4, RandomStream(6), parallelism=4)
    np.testing.assert_array_equal(a.predictions, b.predictions)


def test_feature_selector():
    ds = _ds()
    cf = cross_fit(ds, LearnerSpec(kind="fixed-function", function="identity"), 2, RandomStream(0),
                   features=["x2"])
    np.testing.assert_array_equal(cf.predictions, ds.covariates[:, 1])


def test_auxiliary_rows_used_unweighted():
    ds = _ds(n=20)
    aux = ExperimentDataset(np.full(30, 100.0), np.r_[0.0, 1.0, np.zeros(28)], np.zeros((30, 3)))
    folds = split_folds(20, 2, RandomStream(0))
    cf = cross_fit(ds, LearnerSpec(kind="constant-mean"), 2, folds=folds, auxiliary=aux)
    for f in (0, 1):
        rows = ds.outcome[folds != f]
        expected = (rows.sum() + 3000.0) / (len(rows) + 30)
        np.testing.assert_allclose(cf.predictions[folds == f], expected, rtol=1e-13)


def test_errors():
    ds = _ds(n=5)
    with pytest.raises(InvalidArgumentError):
        cross_fit(ds, LearnerSpec(), 1, RandomStream(0))
    with pytest.raises(InvalidArgumentError):
        cross_fit(ds, LearnerSpec(), 2)
    with pytest.raises(InvalidArgumentError):
        cross_fit(ds, LearnerSpec(), 2, folds=np.array([0, 1, 2, 0, 1]))
    # k = n with n = 2 leaves single-row complements
    tiny = ExperimentDataset([1.0, 2.0], [0, 1], np.zeros((2, 1)))
    with pytest.raises(InvalidArgumentError):
        cross_fit(tiny, LearnerSpec(kind="constant-mean"), 2, RandomStream(0))


def test_round_trip():
    cf = cross_fit(_ds(), LearnerSpec(n_trees=5), 2, RandomStream(7))
    back = CrossFitResult.from_dict(cf.to_dict())
    np.testing.assert_array_equal(back.predictions, cf.predictions)
    np.testing.assert_array_equal(back.folds, cf.folds)
    X = _ds().covariates
    np.testing.assert_array_equal(back.models[1].predict(X), cf.models[1].predict(X))


# -------------------------------------------------------------- pre-period


def test_preperiod_constant_target():
    ds = _ds()
    panel = PanelDataset(ds, np.full(40, 2.0), pre_features=ds.covariates, lag_features=ds.covariates)
    np.testing.assert_allclose(preperiod_fit(panel, LearnerSpec(n_trees=5)), 2.0)


def test_preperiod_identity():
    ds = _ds()
    pre = np.random.default_rng(0).normal(size=(40, 1))
    panel = PanelDataset(ds, ds.outcome, pre_features=pre, lag_features=pre[::-1])
    g = preperiod_fit(panel, LearnerSpec(kind="fixed-function", function="identity"))
    np.testing.assert_array_equal(g, pre[:, 0])


def test_preperiod_needs_columns():
    ds = _ds()
    with pytest.raises(SchemaError):
        preperiod_fit(PanelDataset(ds, ds.outcome), LearnerSpec())


def test_preperiod_on_autocorrelated_panel():
    panel = generate_aa_panel(AaPanelConfig(n=5000, rho=0.7, n_aux=2), RandomStream(3))
    g, model = preperiod_fit(panel, LearnerSpec(n_trees=50), return_model=True)
    assert sample_correlation(g, panel.data.outcome) > 0.5
    assert model.n_features == 3
