from __future__ import annotations

from datetime import date

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import DN, DN_RATIO, LKN, LKN_RATIO, SS, lag
from tsstrat.data import LongFrame, Series
from tsstrat.errors import (
    ConfigError,
    MissingAnchor,
    OrdinalTimestamps,
    TransformOrderError,
    UnknownSeries,
    ZeroAnchor,
    ZeroDivision,
)
from tsstrat.transforms import (
    PipelineState,
    TransformSpec,
    calendar_parts,
    difference_denormalize,
    difference_normalize,
    inverse_pipeline,
    last_known_denormalize,
    last_known_normalize,
    make_datetime_features,
    make_id_features,
    make_lag_matrix,
    standard_scale,
    standard_unscale,
)


def frame_of(values, start=0, freq=1, **more):
    return LongFrame.from_arrays({"s": np.asarray(values, dtype=float), **more}, start, freq)


def raw_targets(frame, fm):
    """Original-unit targets of every row, read straight from the series."""
    out = np.empty((fm.n_rows, len(fm.targets)))
    for r in range(fm.n_rows):
        for j, t in enumerate(fm.targets):
            sid = fm.anchors.series[r, t.series_index]
            s = frame[sid]
            pos = int(np.searchsorted(s.timestamps, fm.anchors.timestamp[r]))
            out[r, j] = s.target[pos + t.offset]
    return out


# -- specs and ordering ---------------------------------------------------------


def test_spec_validation():
    assert TransformSpec("difference_normalizer").mode == "delta"
    with pytest.raises(ConfigError):
        TransformSpec("standard_scaler", mode="delta")
    with pytest.raises(ConfigError):
        TransformSpec("lag", params={"history": 0})
    with pytest.raises(ConfigError):
        TransformSpec("last_known_normalizer", mode="log")
    with pytest.raises(ConfigError):
        TransformSpec("datetime_features", params={"parts": ["hour"]})
    with pytest.raises(ConfigError):
        TransformSpec("standard_scaler", apply_to="inputs")
    spec = TransformSpec("standard_scaler", apply_to="target", params={"pooled": True})
    assert TransformSpec.from_dict(spec.to_dict()) == spec


def test_order_rules():
    with pytest.raises(TransformOrderError):
        PipelineState([SS])
    with pytest.raises(TransformOrderError):
        PipelineState([lag(3), lag(4)])
    with pytest.raises(TransformOrderError):
        PipelineState([lag(3), SS])
    with pytest.raises(TransformOrderError):
        PipelineState([LKN, lag(3)])
    PipelineState([SS, DN, lag(3), LKN])


def test_fitted_exactly_once():
    frame = frame_of(np.arange(10.0))
    state = PipelineState.fit([SS, lag(2)], frame)
    with pytest.raises(RuntimeError):
        state._fit(frame)
    with pytest.raises(RuntimeError):
        PipelineState([lag(2)]).matrix(frame, [1])


# -- series-to-series -------------------------------------------------------------


def test_standard_scale_example():
    scaled, params = standard_scale(frame_of([1, 2, 3]))
    # hand computed: mean 2, population std sqrt(2/3)
    np.testing.assert_allclose(scaled["s"].target, [-1.224744871391589, 0.0, 1.224744871391589], atol=1e-12)
    assert params["s"][0] == 2.0


def test_standard_scale_constant_series_clamps():
    scaled, params = standard_scale(frame_of([5, 5, 5]))
    assert list(scaled["s"].target) == [0, 0, 0]
    assert params["s"] == (5.0, 1.0)


def test_standard_scale_fit_range_only():
    full = frame_of([1, 2, 3, 100, 200])
    train = frame_of([1, 2, 3])
    scaled, params = standard_scale(full, fit_on=train)
    assert params["s"] == (2.0, pytest.approx(np.sqrt(2 / 3)))
    back = standard_unscale(scaled, params)
    np.testing.assert_allclose(back["s"].target, full["s"].target, rtol=0, atol=1e-12)


def test_standard_scale_pooled():
    frame = LongFrame.from_arrays({"a": [0.0, 2.0], "b": [4.0, 6.0]}, 0, 1)
    scaled, _ = standard_scale(frame, pooled=True)
    np.testing.assert_allclose(np.concatenate([scaled["a"].target, scaled["b"].target]).mean(), 0, atol=1e-15)
    assert scaled["a"].target[0] < scaled["b"].target[0]


def test_difference_examples():
    d, anchors = difference_normalize(frame_of([1, 3, 6, 10]), "delta")
    assert list(d["s"].target) == [2, 3, 4]
    assert anchors == {"s": 1.0}
    r, _ = difference_normalize(frame_of([1, 2, 4, 8]), "ratio")
    assert list(r["s"].target) == [2, 2, 2]
    back = difference_denormalize(d, anchors, "delta")
    assert list(back["s"].target) == [1, 3, 6, 10]
    assert list(back["s"].timestamps) == [0, 1, 2, 3]
    with pytest.raises(MissingAnchor):
        difference_denormalize(d, {}, "delta")


def test_difference_ratio_zero_names_series_and_time():
    frame = LongFrame.from_arrays({"z": [1.0, 0.0, 2.0]}, "2021-01-04", "D")
    with pytest.raises(ZeroDivision) as e:
        difference_normalize(frame, "ratio")
    assert e.value.series_id == "z"
    assert "z" in str(e.value) and "2021-01-05" in str(e.value)


# -- lag matrix ---------------------------------------------------------------------


def test_lag_matrix_examples():
    fm = make_lag_matrix(frame_of([1, 2, 3, 4, 5]), history=3, mh=1)
    assert fm.X.tolist() == [[1, 2, 3], [2, 3, 4]]
    assert fm.Y.tolist() == [[4], [5]]
    assert make_lag_matrix(frame_of(np.arange(120.0)), 96, 24).n_rows == 1
    fm = make_lag_matrix(frame_of([1, 2, 3, 4, 5, 6]), history=2, mh=2)
    assert fm.n_rows == 3
    assert fm.X[-1].tolist() == [3, 4] and fm.Y[-1].tolist() == [5, 6]
    # anchors are the 0-based positions 1..3 (1-based t = 2..4)
    assert fm.anchors.timestamp.tolist() == [1, 2, 3]


def test_lag_matrix_column_metadata_and_anchor():
    fm = make_lag_matrix(frame_of(np.arange(10.0) ** 2), history=4, mh=3)
    assert [c.lag for c in fm.columns] == [3, 2, 1, 0]
    assert [t.offset for t in fm.targets] == [1, 2, 3]
    lag0 = fm.column_index("lag", lag=0)
    assert np.array_equal(fm.anchors.last_known[:, 0], fm.X[:, lag0])


def test_short_series_skipped_or_fatal(caplog):
    from tsstrat.errors import SeriesTooShort
    frame = LongFrame.from_arrays({"long": np.arange(10.0), "short": np.arange(3.0)}, 0, 1)
    fm = make_lag_matrix(frame, 3, 2)
    assert set(fm.anchors.series[:, 0]) == {"long"}
    assert "short" in caplog.text
    with pytest.raises(SeriesTooShort):
        make_lag_matrix(frame, 3, 2, strict=True)
    state = PipelineState.fit([lag(3)], frame)
    with pytest.raises(SeriesTooShort):
        state.matrix(frame, [1, 2], multivariate=True)


def test_exogenous_lags_share_history():
    frame = LongFrame.from_arrays({"s": np.arange(6.0)}, 0, 1, exog={"s": {"temp": np.arange(6.0) * 10}})
    fm = PipelineState.fit([lag(2)], frame).matrix(frame, [1])
    assert [c.name for c in fm.columns] == ["lag1", "lag0", "temp_lag1", "temp_lag0"]
    assert fm.X[0].tolist() == [0, 1, 0, 10]


@given(st.integers(1, 30), st.integers(1, 10), st.integers(1, 5))
def test_row_count_law(T, history, mh):
    frame = frame_of(np.arange(T, dtype=float))
    if T < history + mh:
        return
    fm = make_lag_matrix(frame, history, mh)
    assert fm.n_rows == T - history - mh + 1


# -- calendar and id features -----------------------------------------------------


def test_weekday_monday_zero():
    frame = LongFrame.from_arrays({"s": [0.0]}, "2021-01-04", "D")
    assert make_datetime_features(frame, ["weekday"])["s"].tolist() == [[0.0]]


def test_no_parts_no_columns():
    frame = LongFrame.from_arrays({"s": [0.0, 1.0]}, "2021-01-04", "D")
    assert make_datetime_features(frame, [])["s"].shape == (2, 0)


def test_iso_weeks_weekly_series():
    # oracle: date.isocalendar() for 2020-12-21 + k weeks
    frame = LongFrame.from_arrays({"s": np.zeros(8)}, "2020-12-21", "W")
    weeks = make_datetime_features(frame, ["week"])["s"][:, 0]
    assert weeks.tolist() == [52, 53, 1, 2, 3, 4, 5, 6]


@given(st.integers(date(1990, 1, 1).toordinal(), date(2060, 12, 31).toordinal()))
def test_calendar_parts_match_stdlib(ordinal):
    from tsstrat.data import Frequency
    d = date.fromordinal(ordinal)
    got = calendar_parts(np.array([ordinal]), Frequency("day", 1), ["year", "month", "week", "day", "weekday"])[0]
    assert got.tolist() == [d.year, d.month, d.isocalendar()[1], d.day, d.weekday()]


def test_calendar_on_ordinals_rejected():
    with pytest.raises(OrdinalTimestamps):
        make_datetime_features(frame_of([1.0, 2.0]), ["month"])
    with pytest.raises(OrdinalTimestamps):
        PipelineState.fit([TransformSpec("datetime_features"), lag(1)], frame_of([1.0, 2.0]))


def test_id_encodings():
    frame = LongFrame.from_arrays({"b": [0.0, 0.0], "a": [0.0, 0.0]}, 0, 1)
    label = make_id_features(frame, "label")
    assert label["a"][:, 0].tolist() == [0, 0] and label["b"][:, 0].tolist() == [1, 1]
    onehot = make_id_features(frame, "onehot")
    for v in onehot.values():
        assert v.shape == (2, 2) and np.all(v.sum(axis=1) == 1)
    with pytest.raises(UnknownSeries):
        make_id_features(LongFrame.from_arrays({"c": [0.0]}, 0, 1), "label", vocab=("a", "b"))


def test_unseen_series_at_inference():
    train = LongFrame.from_arrays({"a": np.arange(8.0), "b": np.arange(8.0)}, 0, 1)
    state = PipelineState.fit([TransformSpec("id_features"), lag(2)], train)
    with pytest.raises(UnknownSeries):
        state.matrix(LongFrame.from_arrays({"c": np.arange(8.0)}, 0, 1), [1])
    scaled = PipelineState.fit([SS, lag(2)], train)
    with pytest.raises(UnknownSeries):
        scaled.matrix(LongFrame.from_arrays({"c": np.arange(8.0)}, 0, 1), [1])


# -- last-known normalization -----------------------------------------------------


def test_lkn_examples():
    fm = make_lag_matrix(frame_of([1, 2, 3, 4, 5]), 3, 2)
    n = last_known_normalize(fm, "delta")
    assert n.X[0].tolist() == [-2, -1, 0] and n.Y[0].tolist() == [1, 2]
    back = last_known_denormalize(n)
    assert np.array_equal(back.X, fm.X) and np.array_equal(back.Y, fm.Y)

    fm = make_lag_matrix(frame_of([2, 4, 8]), 2, 1)
    r = last_known_normalize(fm, "ratio")
    assert r.X[0].tolist() == [0.5, 1] and r.Y[0].tolist() == [2]
    back = last_known_denormalize(r)
    assert np.array_equal(back.X, fm.X) and np.array_equal(back.Y, fm.Y)


def test_lkn_zero_anchor():
    fm = make_lag_matrix(frame_of([2, 0, 8]), 2, 1)
    with pytest.raises(ZeroAnchor):
        last_known_normalize(fm, "ratio")


def test_lkn_twice_rejected():
    fm = last_known_normalize(make_lag_matrix(frame_of([1, 2, 3, 4]), 2, 1))
    with pytest.raises(ConfigError):
        last_known_normalize(fm)


def test_lkn_leaves_other_columns_bit_identical():
    rng = np.random.default_rng(5)
    frame = LongFrame.from_arrays(
        {"a": rng.normal(size=40) + 5, "b": rng.normal(size=40) + 9}, "2021-01-04", "D",
        exog={sid: {"temp": rng.normal(size=40)} for sid in ("a", "b")},
    )
    specs = [TransformSpec("datetime_features", params={"parts": ["month", "weekday"], "lags": 2}),
             TransformSpec("id_features", params={"encoding": "onehot"}), lag(5)]
    raw = PipelineState.fit(specs, frame).matrix(frame, [1, 2])
    normed = PipelineState.fit(specs + [LKN], frame).matrix(frame, [1, 2])
    untouched = [i for i, c in enumerate(raw.columns) if c.role != "lag"]
    assert len(untouched) == 5 * 1 + 4 + 2
    assert np.array_equal(raw.X[:, untouched], normed.X[:, untouched])
    touched = [i for i, c in enumerate(raw.columns) if c.role == "lag"]
    assert not np.array_equal(raw.X[:, touched], normed.X[:, touched])

    # opt-in: exogenous lags normalized by their own lag-0
    with_exog = PipelineState.fit(specs + [TransformSpec("last_known_normalizer", params={"exog": True})],
                                  frame).matrix(frame, [1, 2])
    ex0 = raw.column_index("exog", "temp", lag=0)
    assert np.all(with_exog.X[:, ex0] == 0)


# -- pipeline state and inverse ---------------------------------------------------


def test_feature_and_target_chains_are_separate():
    frame = frame_of(np.arange(10.0) * 3)
    state = PipelineState.fit([TransformSpec("standard_scaler", apply_to="target"), lag(2)], frame)
    fm = state.matrix(frame, [1])
    raw = make_lag_matrix(frame, 2, 1)
    assert np.array_equal(fm.X, raw.X)
    assert not np.array_equal(fm.Y, raw.Y)
    np.testing.assert_allclose(inverse_pipeline(state, fm.Y, fm.anchors), raw.Y, atol=1e-12)


def test_inverse_identity_and_scaler_mean():
    frame = frame_of([6.0, 8.0, 6.0, 8.0])  # mean 7
    ident = PipelineState.fit([lag(2)], frame)
    fm = ident.matrix(frame, [1])
    pred = np.array([[1.5], [2.5]])
    assert np.array_equal(inverse_pipeline(ident, pred, fm.anchors), pred)
    scaled = PipelineState.fit([SS, lag(2)], frame)
    fm = scaled.matrix(frame, [1])
    assert inverse_pipeline(scaled, np.zeros((fm.n_rows, 1)), fm.anchors).tolist() == [[7.0], [7.0]]


def test_inverse_missing_anchor():
    frame = frame_of(np.arange(1.0, 9.0))
    state = PipelineState.fit([SS, DN, lag(2)], frame)
    fm = state.matrix(frame, [1])
    from dataclasses import replace
    broken = replace(fm.anchors, levels=fm.anchors.levels[:, :, :1])
    with pytest.raises(MissingAnchor):
        inverse_pipeline(state, fm.Y, broken)


def test_dn_drops_first_point_in_pipeline():
    frame = frame_of(np.arange(1.0, 13.0))
    state = PipelineState.fit([DN, lag(3)], frame)
    assert state.n_dropped == 1 and state.min_history == 4
    fm = state.matrix(frame, [1, 2])
    assert fm.n_rows == 12 - 1 - 3 - 2 + 1
    assert np.all(fm.X == 1) and np.all(fm.Y == 1)


PIPELINES = {
    "SS": [SS],
    "DN-delta": [DN],
    "DN-ratio": [DN_RATIO],
    "LKN-delta": [],
    "LKN-ratio": [],
    "SS+DN+LKN": [SS, DN],
}


@pytest.mark.parametrize("name", sorted(PIPELINES))
def test_pipeline_round_trip_on_true_targets(name):
    rng = np.random.default_rng(11)
    frame = LongFrame.from_arrays({f"s{i}": 5 + np.abs(rng.normal(size=50)).cumsum() for i in range(3)}, 0, 1)
    tail = [LKN_RATIO] if name == "LKN-ratio" else [LKN] if "LKN" in name else []
    state = PipelineState.fit(PIPELINES[name] + [lag(6)] + tail, frame)
    for mv in (False, True):
        fm = state.matrix(frame, [1, 2, 3], multivariate=mv)
        s_count = 3 if mv else 1
        pred = fm.Y.reshape(fm.n_rows, s_count, 3)
        back = inverse_pipeline(state, pred, fm.anchors).reshape(fm.n_rows, -1)
        np.testing.assert_allclose(back, raw_targets(frame, fm), rtol=1e-9, atol=1e-9)


def test_leakage_metadata():
    frame = LongFrame.from_arrays({"a": np.arange(30.0), "b": np.arange(30.0)}, "2021-01-04", "D",
                                  exog={"a": {"x": np.ones(30)}, "b": {"x": np.ones(30)}})
    specs = [TransformSpec("datetime_features", params={"lags": 3}), TransformSpec("id_features"), lag(4), LKN]
    for mv in (False, True):
        fm = PipelineState.fit(specs, frame).matrix(frame, [1, 2, 3], multivariate=mv)
        assert all(c.lag is None or c.lag >= 0 for c in fm.columns)
        assert min(t.offset for t in fm.targets) >= 1
        # the datetime feature of lag k is the calendar value at t - k
        col = fm.column_index("datetime", "week", lag=2)
        from tsstrat.transforms import calendar_parts as cp
        expect = cp(fm.anchors.timestamp - 2, frame.frequency, ["week"])[:, 0]
        assert np.array_equal(fm.X[:, col], expect)


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@given(st.lists(finite, min_size=8, max_size=40))
def test_round_trip_property_delta(values):
    frame = frame_of(values)
    for tail, head in (([], [SS]), ([], [DN]), ([LKN], []), ([LKN], [SS, DN])):
        state = PipelineState.fit(head + [lag(3)] + tail, frame)
        fm = state.matrix(frame, [1, 2])
        back = inverse_pipeline(state, fm.Y, fm.anchors)
        truth = raw_targets(frame, fm)
        np.testing.assert_allclose(back, truth, rtol=1e-9, atol=1e-9 * (1 + np.abs(truth).max()))


@given(st.lists(st.floats(0.01, 1e4), min_size=8, max_size=40))
def test_round_trip_property_ratio(values):
    frame = frame_of(values)
    for specs in ([DN_RATIO, lag(3)], [lag(3), LKN_RATIO], [DN_RATIO, lag(3), LKN_RATIO]):
        state = PipelineState.fit(specs, frame)
        fm = state.matrix(frame, [1, 2])
        back = inverse_pipeline(state, fm.Y, fm.anchors)
        np.testing.assert_allclose(back, raw_targets(frame, fm), rtol=1e-9)


@given(st.integers(-4, 4), st.integers(0, 2**16))
def test_affine_invariance_exact_for_power_of_two(k, seed):
    rng = np.random.default_rng(seed)
    base = {"a": rng.normal(size=30), "b": rng.normal(size=30)}
    moved = dict(base, a=base["a"] * 2.0 ** k)
    specs = [SS, lag(4)]
    m1 = PipelineState.fit(specs, LongFrame.from_arrays(base, 0, 1)).matrix(LongFrame.from_arrays(base, 0, 1), [1])
    m2 = PipelineState.fit(specs, LongFrame.from_arrays(moved, 0, 1)).matrix(LongFrame.from_arrays(moved, 0, 1), [1])
    assert np.array_equal(m1.X, m2.X) and np.array_equal(m1.Y, m2.Y)


@given(st.floats(0.1, 100), st.floats(-100, 100), st.integers(0, 2**16))
def test_affine_invariance_general(a, b, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=30) * 3 + 1
    s1, _ = standard_scale(frame_of(x))
    s2, _ = standard_scale(frame_of(a * x + b))
    np.testing.assert_allclose(s1["s"].target, s2["s"].target, rtol=0, atol=1e-12 * (1 + abs(b) / a))


def test_series_state_exposes_stages():
    frame = LongFrame.from_arrays({"s": np.arange(1.0, 7.0)}, 0, 1)
    state = PipelineState.fit([SS, DN, lag(2)], frame)
    st_ = state.series_state(Series("s", np.arange(6), np.arange(1.0, 7.0)))
    assert len(st_.stages) == 3 and st_.start == 1
    assert np.isnan(st_.stages[2][0])
