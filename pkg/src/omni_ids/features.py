"""Feature encoding, z-score scaling and sliding windows."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

RELATIVE_TIME_PERIOD = 3000.0
N_FEATURES = 19
DEFAULT_WINDOW = 10


def relative_time(timestamp: float, session_start: float) -> float:
    """Seconds since the session's first packet, reset every 3000 s."""
    elapsed = timestamp - session_start
    if elapsed < 0:
        raise ValueError(f"timestamp {timestamp} precedes session start {session_start}")
    return elapsed % RELATIVE_TIME_PERIOD


@dataclass(frozen=True)
class ScalerStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValueError("mean and std must be 1-d vectors of equal length")
        if np.any(self.std < 0):
            raise ValueError("std must be non-negative")

    def transform(self, X) -> np.ndarray:
        return transform(X, self)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def fit_scaler(X) -> ScalerStats:
    """Per-column population mean and standard deviation."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("fit_scaler needs a non-empty 2-d array")
    return ScalerStats(X.mean(axis=0), X.std(axis=0))


def transform(X, stats: ScalerStats) -> np.ndarray:
    """(x - mean) / std along the last axis; zero-variance columns map to 0."""
    X = np.asarray(X, dtype=np.float64)
    scale = np.where(stats.std > 0, stats.std, 1.0)
    out = (X - stats.mean) / scale
    out[..., stats.std == 0] = 0.0
    return out


class FeatureScaler(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`fit_scaler` / :func:`transform`."""

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.stats_ = fit_scaler(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "stats_")
        X = check_array(X, dtype=np.float64, allow_nd=True)
        if X.shape[-1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[-1]}")
        return transform(X, self.stats_)


def make_windows(X, t: int = DEFAULT_WINDOW, y=None):
    """Stride-1 windows of ``t`` consecutive rows.

    Returns a read-only ``(n - t + 1, t, n_features)`` view of ``X`` (no
    copy) and, if ``y`` is given, the label of each window's last row.
    Fewer than ``t`` rows yields an empty array.
    """
    if t < 1:
        raise ValueError("window length must be >= 1")
    X = np.asarray(X)
    n = X.shape[0]
    if n < t:
        W = np.empty((0, t) + X.shape[1:], dtype=X.dtype)
    else:
        W = np.moveaxis(sliding_window_view(X, t, axis=0), -1, 1)
    if y is None:
        return W
    y = np.asarray(y)
    return W, y[t - 1:]


def n_windows(n: int, t: int) -> int:
    return max(0, n - t + 1)
