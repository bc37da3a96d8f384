from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tsstrat.data import LongFrame
from tsstrat.errors import ConfigError, DimensionMismatch, InsufficientLags, SingularSystem, TooFewSamples
from tsstrat.models import (
    FitContext,
    ModelSpec,
    fit_gbdt,
    fit_model,
    fit_ridge,
    load_model,
    model_from_dict,
    save_model,
)
from tsstrat.transforms import make_lag_matrix

# oracle: pseudoinverse least squares on [1, X] (notes/oracles.py), seed 42
RIDGE_INTERCEPT = 2.999835211482643
RIDGE_COEFS = [1.4976018664464261, -1.9975972262511819, 0.4980212924250469]


def ridge_data():
    rng = np.random.default_rng(42)
    X = rng.normal(size=(20, 3))
    Y = X @ np.array([1.5, -2.0, 0.5]) + 3 + 0.01 * rng.normal(size=20)
    return X, Y


def context_of(fm):
    return FitContext(tuple(fm.columns), tuple(fm.targets), tuple(fm.series_ids))


# -- specs ---------------------------------------------------------------------------


def test_spec_defaults_and_validation():
    assert ModelSpec("gbdt").params["n_trees"] == 100
    assert ModelSpec("ridge").params["lambda"] == 1.0
    with pytest.raises(ConfigError):
        ModelSpec("forest")
    with pytest.raises(ConfigError):
        ModelSpec("ridge", {"lambda": -1})
    with pytest.raises(ConfigError):
        ModelSpec("gbdt", {"learning_rate": 0})
    with pytest.raises(ConfigError):
        ModelSpec("gbdt", {"depth": 3})
    assert ModelSpec("seasonal_naive", {"period": 7}).label == "seasonal_naive(7)"


# -- ridge ---------------------------------------------------------------------------


def test_ridge_recovers_coefficients():
    X, Y = ridge_data()
    m = fit_ridge(X, Y, lam=1e-8)
    np.testing.assert_allclose(m.intercept, [RIDGE_INTERCEPT], atol=1e-6)
    np.testing.assert_allclose(m.weights[:, 0], RIDGE_COEFS, atol=1e-6)
    np.testing.assert_allclose(m.weights[:, 0], [1.5, -2.0, 0.5], atol=1e-2)


def test_ridge_lambda_zero_matches_pinv():
    X, Y = ridge_data()
    m = fit_ridge(X, Y, lam=0.0)
    np.testing.assert_allclose(m.coef[:, 0], [RIDGE_INTERCEPT] + RIDGE_COEFS, rtol=1e-10)


def test_ridge_singular_without_penalty():
    X = np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]])
    with pytest.raises(SingularSystem):
        fit_ridge(X, np.arange(3.0), lam=0.0)
    fit_ridge(X, np.arange(3.0), lam=0.5)


@given(st.integers(0, 2**16), st.floats(0.01, 100), st.integers(1, 4))
def test_ridge_normal_equation_residual(seed, lam, outputs):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, 5)) * rng.uniform(0.1, 10, size=5)
    Y = rng.normal(size=(30, outputs))
    m = fit_ridge(X, Y, lam=lam)
    Xc, Yc = X - X.mean(0), Y - Y.mean(0)
    A = Xc.T @ Xc + lam * np.eye(5)
    resid = A @ m.weights - Xc.T @ Yc
    scale = np.linalg.norm(A) * np.linalg.norm(m.weights) + np.linalg.norm(Xc.T @ Yc)
    assert np.linalg.norm(resid) <= 1e-10 * scale
    # intercept unpenalized: predictions at the mean row equal the target mean
    np.testing.assert_allclose(m.predict(X.mean(0)[None]), Y.mean(0)[None], atol=1e-9)


def test_ridge_multi_output_is_columnwise():
    rng = np.random.default_rng(0)
    X, Y = rng.normal(size=(25, 4)), rng.normal(size=(25, 3))
    joint = fit_ridge(X, Y, 2.0)
    for j in range(3):
        single = fit_ridge(X, Y[:, j], 2.0)
        np.testing.assert_allclose(joint.coef[:, j], single.coef[:, 0], rtol=1e-12, atol=1e-14)


# -- gbdt ----------------------------------------------------------------------------


def test_gbdt_constant_target():
    X = np.random.default_rng(0).normal(size=(40, 3))
    m = fit_gbdt(X, np.full(40, 4.25), ModelSpec("gbdt", {"n_trees": 10}))
    assert np.all(m.predict(X) == 4.25)
    assert m.report.stopped_at == [0]


def test_gbdt_step_function():
    x = np.arange(20.0)[:, None]
    y = np.where(x[:, 0] < 10, 0.0, 5.0)
    m = fit_gbdt(x, y, ModelSpec("gbdt", {"n_trees": 200, "max_depth": 1, "learning_rate": 0.3,
                                          "min_samples_leaf": 1}))
    assert np.mean((m.predict(x)[:, 0] - y) ** 2) < 1e-3
    root = m.ensembles[0][0]
    assert root.feature[0] == 0 and root.threshold[0] == 9.5


def test_gbdt_training_loss_strictly_decreasing():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(200, 4))
    y = np.sin(X[:, 0]) + X[:, 1] ** 2 + 0.1 * rng.normal(size=200)
    m = fit_gbdt(X, y, ModelSpec("gbdt", {"n_trees": 60}))
    losses = np.array(m.report.losses[0])
    assert len(losses) > 10 and np.all(np.diff(losses) < 0)


def test_gbdt_early_stopping_truncates_to_best_round():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(120, 2))
    y = X[:, 0] + rng.normal(size=120)           # mostly noise, so validation loss turns up early
    Xv = rng.normal(size=(60, 2))
    yv = Xv[:, 0] + rng.normal(size=60)
    spec = ModelSpec("gbdt", {"n_trees": 300, "max_depth": 4, "learning_rate": 0.3,
                              "min_samples_leaf": 2, "early_stopping_rounds": 5})
    m = fit_gbdt(X, y, spec, validation=(Xv, yv))
    best, stopped = m.report.best_round[0], m.report.stopped_at[0]
    assert stopped < 300 and stopped - best == 5
    assert len(m.ensembles[0]) == best
    vl = m.report.val_losses[0]
    assert vl[best] == min(vl)


def test_gbdt_too_few_samples():
    with pytest.raises(TooFewSamples):
        fit_gbdt(np.zeros((9, 2)), np.zeros(9), ModelSpec("gbdt", {"min_samples_leaf": 5}))


def test_gbdt_deterministic():
    rng = np.random.default_rng(3)
    X, Y = rng.normal(size=(80, 3)), rng.normal(size=(80, 2))
    spec = ModelSpec("gbdt", {"n_trees": 20}, seed=7)
    a, b = fit_gbdt(X, Y, spec), fit_gbdt(X, Y, spec)
    assert np.array_equal(a.predict(X), b.predict(X))


def test_gbdt_leaf_size_respected():
    rng = np.random.default_rng(4)
    X, y = rng.normal(size=(50, 2)), rng.normal(size=50)
    m = fit_gbdt(X, y, ModelSpec("gbdt", {"n_trees": 5, "max_depth": 6, "min_samples_leaf": 7}))
    for tree in m.ensembles[0]:
        leaves = tree.feature < 0
        # count training rows reaching each leaf
        counts = np.zeros(len(tree.feature), dtype=int)
        for row in X:
            node = 0
            while tree.feature[node] >= 0:
                node = tree.left[node] if row[tree.feature[node]] <= tree.threshold[node] else tree.right[node]
            counts[node] += 1
        assert np.all(counts[leaves] >= 7)


# -- naive baselines -----------------------------------------------------------------


def series_matrix(values, history, mh):
    frame = LongFrame.from_arrays({"s": np.asarray(values, dtype=float)}, 0, 1)
    return make_lag_matrix(frame, history, mh)


def test_persistence_repeats_last_value():
    fm = series_matrix(np.arange(20.0) ** 1.5, 5, 4)
    m = fit_model(ModelSpec("persistence"), fm.X, fm.Y, context_of(fm))
    out = m.predict(fm.X)
    assert np.array_equal(out, np.repeat(fm.X[:, [-1]], 4, axis=1))


def test_seasonal_naive_copies_period_back():
    values = np.arange(30.0)
    fm = series_matrix(values, 6, 5)
    m = fit_model(ModelSpec("seasonal_naive", {"period": 3}), fm.X, fm.Y, context_of(fm))
    out = m.predict(fm.X[:1])[0]
    t = 5  # anchor of the first row
    expect = [values[t + h - 3 * int(np.ceil(h / 3))] for h in range(1, 6)]
    assert out.tolist() == expect


def test_seasonal_naive_needs_enough_lags():
    fm = series_matrix(np.arange(20.0), 3, 2)
    with pytest.raises(InsufficientLags):
        fit_model(ModelSpec("seasonal_naive", {"period": 7}), fm.X, fm.Y, context_of(fm))


# -- common interface ----------------------------------------------------------------


@pytest.mark.parametrize("kind", ["ridge", "gbdt"])
def test_dimension_mismatch(kind):
    rng = np.random.default_rng(0)
    m = fit_model(ModelSpec(kind), rng.normal(size=(30, 4)), rng.normal(size=30))
    with pytest.raises(DimensionMismatch):
        m.predict(np.zeros((3, 5)))
    with pytest.raises(DimensionMismatch):
        fit_model(ModelSpec(kind), np.zeros((3, 2)), np.zeros(4))


@pytest.mark.parametrize("kind", ["ridge", "gbdt", "persistence", "seasonal_naive"])
def test_save_load_round_trip(kind, tmp_path):
    fm = series_matrix(np.sin(np.arange(80.0) / 3) * 10, 8, 3)
    m = fit_model(ModelSpec(kind, {"n_trees": 15} if kind == "gbdt" else {}), fm.X, fm.Y, context_of(fm))
    path = tmp_path / "model.json"
    save_model(m, path)
    back = load_model(path)
    assert np.array_equal(back.predict(fm.X), m.predict(fm.X))
    assert back.report.to_dict() == m.report.to_dict()
    with pytest.raises(ValueError):
        model_from_dict({**m.to_dict(), "schema_version": 99})
