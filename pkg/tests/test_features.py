import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.preprocessing import StandardScaler

from omni_ids import features
from omni_ids.features import FeatureScaler, fit_scaler, make_windows, relative_time


@pytest.mark.parametrize("ts,start,expected", [
    (10.0, 10.0, 0.0), (2999.5, 0.0, 2999.5), (3000.0, 0.0, 0.0), (7001.0, 1.0, 1000.0),
])
def test_relative_time(ts, start, expected):
    assert relative_time(ts, start) == pytest.approx(expected)


@given(st.floats(0, 1e6), st.floats(0, 1e6))
def test_relative_time_range(start, elapsed):
    r = relative_time(start + elapsed, start)
    assert 0 <= r < features.RELATIVE_TIME_PERIOD


def test_relative_time_before_start():
    with pytest.raises(ValueError):
        relative_time(1.0, 2.0)


@given(arrays(np.float64, st.tuples(st.integers(2, 40), st.integers(1, 6)),
              elements=st.floats(-1e4, 1e4)))
def test_scaler_matches_sklearn(X):
    ours = fit_scaler(X)
    ref = StandardScaler().fit(X)
    np.testing.assert_allclose(ours.mean, ref.mean_, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(ours.std, np.sqrt(ref.var_), rtol=1e-7, atol=1e-9)
    keep = ours.std > 1e-6 * (1 + np.abs(ours.mean))
    np.testing.assert_allclose(ours.transform(X)[:, keep], ref.transform(X)[:, keep],
                               rtol=1e-6, atol=1e-6)


def test_constant_column_maps_to_zero():
    X = np.column_stack([np.arange(5.0), np.full(5, 7.0)])
    Z = FeatureScaler().fit(X).transform(X)
    assert np.all(Z[:, 1] == 0)
    assert Z[:, 0].mean() == pytest.approx(0) and Z[:, 0].std() == pytest.approx(1)


def test_scaler_applies_to_windows():
    rng = np.random.default_rng(0)
    X = rng.normal(3, 2, size=(50, 4))
    stats = fit_scaler(X)
    W = make_windows(X, 5)
    np.testing.assert_allclose(stats.transform(W)[:, -1], stats.transform(X)[4:])


def test_scaler_feature_mismatch():
    s = FeatureScaler().fit(np.ones((3, 4)))
    with pytest.raises(ValueError):
        s.transform(np.ones((3, 5)))


def test_scaler_dict_roundtrip():
    s = fit_scaler(np.random.default_rng(1).normal(size=(20, 3)))
    back = features.ScalerStats.from_dict(s.to_dict())
    np.testing.assert_array_equal(back.mean, s.mean)
    np.testing.assert_array_equal(back.std, s.std)


@given(st.integers(0, 40), st.integers(1, 12))
def test_windows_match_loop(n, t):
    X = np.arange(n * 3, dtype=float).reshape(n, 3)
    y = np.arange(n)
    W, yw = make_windows(X, t, y)
    expected = [X[i:i + t] for i in range(n - t + 1)]
    assert W.shape == (max(0, n - t + 1), t, 3)
    assert len(W) == features.n_windows(n, t)
    for got, want in zip(W, expected):
        np.testing.assert_array_equal(got, want)
    # each window carries the label of its newest packet
    np.testing.assert_array_equal(yw, y[t - 1:])


def test_windows_are_views():
    X = np.zeros((20, 19))
    W = make_windows(X, 10)
    assert np.shares_memory(W, X)


def test_bad_window_length():
    with pytest.raises(ValueError):
        make_windows(np.zeros((5, 2)), 0)
