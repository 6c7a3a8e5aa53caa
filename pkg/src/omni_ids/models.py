"""FNN, LSTM and stacked FNN-LSTM intrusion detectors with an sklearn API.

Labels are class names. In binary mode every name other than ``"Normal"``
maps to ``"Attack"``; integer labels are taken as indices into ``classes_``.

Input shapes:

* :class:`FNNClassifier` -- ``(n, 19)`` packet features.
* :class:`LSTMClassifier` and :class:`EnsembleClassifier` -- ``(n, t, 19)``
  windows from :func:`omni_ids.features.make_windows`; the label of a window
  is the label of its last packet and the FNN inside the ensemble sees only
  that last packet.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted

from . import nn
from .features import DEFAULT_WINDOW, N_FEATURES, ScalerStats, fit_scaler, transform
from .traffic import CLASS_NAMES

log = logging.getLogger(__name__)

BINARY_CLASSES = ("Normal", "Attack")
MODES = ("binary", "multi")
PREDICT_CHUNK = 8192


def classes_for(mode: str) -> tuple[str, ...]:
    if mode == "binary":
        return BINARY_CLASSES
    if mode == "multi":
        return CLASS_NAMES
    raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def encode_labels(y, mode: str) -> np.ndarray:
    """Class indices for ``y`` under ``mode`` (binary: Normal -> 0, attack -> 1)."""
    classes = classes_for(mode)
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"labels must be 1-d, got shape {y.shape}")
    if y.dtype.kind in "iu":
        if y.size and (y.min() < 0 or y.max() >= len(classes)):
            raise ValueError(f"label index out of range for {len(classes)} classes")
        return y.astype(np.intp)
    y = y.astype(str)
    if mode == "binary":
        known = set(BINARY_CLASSES) | set(CLASS_NAMES)
        bad = set(np.unique(y)) - known
        if bad:
            raise ValueError(f"unknown labels {sorted(bad)}")
        return (y != "Normal").astype(np.intp)
    index = {c: i for i, c in enumerate(classes)}
    try:
        return np.array([index[v] for v in y], dtype=np.intp)
    except KeyError as exc:
        raise ValueError(f"unknown label {exc.args[0]!r}") from None


# -- training loop --------------------------------------------------------------

def stop_epoch(losses, tol: float = 1e-6, patience: int = 35) -> int | None:
    """1-based epoch at which the relative-delta counter reaches ``patience``.

    An epoch qualifies when ``|L_k - L_{k-1}| / |L_{k-1}| < tol``; the first
    epoch has no predecessor and never qualifies. Returns ``None`` if the
    counter never gets there.
    """
    count = 0
    for k in range(1, len(losses)):
        prev = losses[k - 1]
        rel = abs(losses[k] - prev) / abs(prev) if prev != 0 else (0.0 if losses[k] == 0 else math.inf)
        if rel < tol:
            count += 1
            if count >= patience:
                return k + 1
    return None


@dataclass
class TrainLog:
    train_loss: list = field(default_factory=list)
    test_loss: list = field(default_factory=list)
    n_steps: int = 0
    stopped_early: bool = False


def n_batches(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


def train_network(net, X, y, *, batch_size=1000, max_epochs=100, tol=1e-6, patience=35,
                  learning_rate=1e-3, rng=None, prepare=None, eval_set=None,
                  verbose=False) -> TrainLog:
    """Mini-batch Adam on ``net`` with the relative-delta early stop.

    ``prepare`` maps a raw batch to network input (e.g. scaling); the epoch
    loss is the sample-weighted mean of the batch losses.
    """
    if len(X) == 0:
        raise ValueError("cannot train on empty data")
    if batch_size < 1 or max_epochs < 1 or patience < 1 or tol < 0 or learning_rate <= 0:
        raise ValueError("batch_size, max_epochs, patience and learning_rate must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    prepare = prepare or (lambda a: a)
    state = nn.AdamState.for_params(net.arrays, lr=learning_rate)
    out = TrainLog()
    n = len(X)
    for epoch in range(max_epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = np.sort(order[start:start + batch_size])
            loss, grads = net.loss_and_grad(prepare(X[idx]), y[idx])
            nn.adam_step(net.arrays, grads, state)
            total += loss * len(idx)
        out.n_steps = state.step_count
        out.train_loss.append(total / n)
        if eval_set is not None:
            out.test_loss.append(network_loss(net, eval_set[0], eval_set[1], prepare))
        if verbose:
            log.info("epoch %d loss %.6g", epoch + 1, out.train_loss[-1])
        if stop_epoch(out.train_loss, tol, patience) is not None:
            out.stopped_early = True
            break
    return out


def network_loss(net, X, y, prepare=None, chunk=PREDICT_CHUNK) -> float:
    prepare = prepare or (lambda a: a)
    total = 0.0
    for start in range(0, len(X), chunk):
        part = slice(start, start + chunk)
        total += net.loss(prepare(X[part]), y[part]) * len(y[part])
    return total / len(X)


def network_proba(net, X, prepare=None, chunk=PREDICT_CHUNK) -> np.ndarray:
    prepare = prepare or (lambda a: a)
    parts = [net.proba(prepare(X[s:s + chunk])) for s in range(0, len(X), chunk)]
    if not parts:
        width = max(2, net.n_outputs)
        return np.empty((0, width))
    return np.concatenate(parts)


def labels_from_proba(proba: np.ndarray) -> np.ndarray:
    """Argmax, except a 2-column score tie at exactly 0.5 goes to column 0."""
    if proba.shape[1] == 2:
        return (proba[:, 1] > 0.5).astype(np.intp)
    return proba.argmax(axis=1)


# -- estimators -----------------------------------------------------------------

class _IDSClassifier(ClassifierMixin, BaseEstimator):
    """Shared fit/predict plumbing; subclasses build the network and shape checks."""

    def _check_X(self, X, fitting=False):
        raise NotImplementedError

    def _build(self, n_features, rng):
        raise NotImplementedError

    def _scaler_rows(self, X):
        raise NotImplementedError

    def _prepare(self, batch):
        return transform(batch, self.scaler_)

    def fit(self, X, y, eval_set=None):
        X = self._check_X(X, fitting=True)
        classes = classes_for(self.mode)
        yi = encode_labels(y, self.mode)
        if len(yi) != len(X):
            raise ValueError(f"X has {len(X)} samples, y has {len(yi)}")
        if len(X) == 0:
            raise ValueError("cannot fit on empty data")
        rng = np.random.default_rng(self.random_state)
        self.classes_ = np.array(classes)
        self.n_features_in_ = X.shape[-1]
        self.scaler_ = fit_scaler(self._scaler_rows(X))
        self.network_ = self._build(X.shape[-1], rng)
        if eval_set is not None:
            Xe = self._check_X(eval_set[0])
            eval_set = (Xe, encode_labels(eval_set[1], self.mode))
        self.log_ = train_network(
            self.network_, X, yi, batch_size=self.batch_size, max_epochs=self.max_epochs,
            tol=self.tol, patience=self.patience, learning_rate=self.learning_rate, rng=rng,
            prepare=self._prepare, eval_set=eval_set, verbose=self.verbose)
        self.loss_curve_ = list(self.log_.train_loss)
        self.test_loss_curve_ = list(self.log_.test_loss)
        self.n_epochs_ = len(self.loss_curve_)
        return self

    def predict_proba(self, X):
        """Class scores, one column per entry of ``classes_``; rows sum to 1."""
        check_is_fitted(self, "network_")
        X = self._check_X(X)
        return network_proba(self.network_, X, self._prepare)

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[labels_from_proba(proba)]

    def loss(self, X, y) -> float:
        """Mean training-objective loss on ``(X, y)``."""
        check_is_fitted(self, "network_")
        X = self._check_X(X)
        return network_loss(self.network_, X, encode_labels(y, self.mode), self._prepare)

    def initial_loss(self, X, y) -> float:
        """Loss of a freshly initialised network (scaler fitted on ``X``)."""
        X = self._check_X(X, fitting=True)
        self.scaler_ = fit_scaler(self._scaler_rows(X))
        net = self._build(X.shape[-1], np.random.default_rng(self.random_state))
        return network_loss(net, X, encode_labels(y, self.mode), self._prepare)


class FNNClassifier(_IDSClassifier):
    """Feedforward network on single packets.

    Parameters
    ----------
    hidden_layers : tuple of int
        Widths of the ReLU hidden layers; ``()`` gives a linear softmax model.
    mode : {"binary", "multi"}
    batch_size, max_epochs, learning_rate : training schedule (Adam).
    tol, patience : stop once ``patience`` epochs had a relative loss change
        below ``tol``.
    """

    def __init__(self, hidden_layers=(64,), mode="binary", batch_size=1000, max_epochs=100,
                 tol=1e-6, patience=35, learning_rate=1e-3, random_state=0, verbose=False):
        self.hidden_layers = hidden_layers
        self.mode = mode
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.tol = tol
        self.patience = patience
        self.learning_rate = learning_rate
        self.random_state = random_state
        self.verbose = verbose

    def _check_X(self, X, fitting=False):
        X = check_array(X, dtype=np.float64, ensure_min_samples=0)
        expected = N_FEATURES if fitting or not hasattr(self, "n_features_in_") else self.n_features_in_
        if X.shape[1] != expected:
            raise ValueError(f"expected {expected} features per packet, got {X.shape[1]}")
        return X

    def _scaler_rows(self, X):
        return X

    def _build(self, n_features, rng):
        n_out = len(classes_for(self.mode))
        return nn.MLP(n_features, n_out, tuple(self.hidden_layers), "relu", rng)


class LSTMClassifier(_IDSClassifier):
    """Two stacked LSTM layers over windows of ``window`` packets.

    Binary mode ends in a single sigmoid unit, multiclass in a softmax. The
    stop rule is ``max_epochs`` (3) or the FNN relative-delta rule, whichever
    fires first.
    """

    def __init__(self, hidden_size=10, n_layers=2, window=DEFAULT_WINDOW, mode="binary",
                 batch_size=1000, max_epochs=3, tol=1e-6, patience=35, learning_rate=1e-2,
                 random_state=0, verbose=False):
        self.hidden_size = hidden_size
        self.n_layers = n_layers
        self.window = window
        self.mode = mode
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.tol = tol
        self.patience = patience
        self.learning_rate = learning_rate
        self.random_state = random_state
        self.verbose = verbose

    def _check_X(self, X, fitting=False):
        X = check_windows(X, self.window)
        if not fitting and hasattr(self, "n_features_in_") and X.shape[2] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[2]}")
        return X

    def _scaler_rows(self, X):
        return X[:, -1]

    def _build(self, n_features, rng):
        n_out = 1 if self.mode == "binary" else len(CLASS_NAMES)
        return nn.LSTMNet(n_features, n_out, self.hidden_size, self.n_layers, rng)


def check_windows(X, window):
    """Validate a ``(n, window, features)`` array without copying views."""
    X = np.asarray(X)
    if X.ndim != 3:
        raise ValueError(f"expected windows of shape (n, {window}, features), got {X.shape}")
    if X.shape[1] != window:
        raise ValueError(f"window length {X.shape[1]} != model window {window}")
    if X.shape[2] != N_FEATURES:
        raise ValueError(f"expected {N_FEATURES} features per packet, got {X.shape[2]}")
    if X.dtype != np.float64:
        X = X.astype(np.float64)
    if X.size and not np.isfinite(X).all():
        raise ValueError("input contains NaN or infinity")
    return X


class EnsembleClassifier(ClassifierMixin, BaseEstimator):
    """FNN and LSTM base models whose class probabilities feed an MLP voter.

    The voter input is ``[fnn_proba, lstm_proba]`` (FNN columns first), so it
    has ``2 * n_classes`` inputs. The bases are frozen while the voter trains.

    With ``prefit=True`` the supplied base models must already be fitted; the
    voter trains on all of ``X`` passed to :meth:`fit`, which should then be
    data the bases have not seen. Otherwise the rows are cut into
    ``voter_blocks`` contiguous blocks, about ``voter_fraction`` of the blocks
    are held out for the voter and clones of the bases are fitted on the
    rest. Holding out whole stretches of traffic (rather than random rows)
    keeps base-model scores on the voter's data honest: a base model that
    only memorised time-local context looks as unreliable there as it will
    on new traffic.
    """

    def __init__(self, fnn=None, lstm=None, voter_hidden=(32,), mode="multi", prefit=False,
                 voter_fraction=0.3, voter_blocks=20, batch_size=1000, max_epochs=100, tol=1e-6,
                 patience=35, learning_rate=1e-3, random_state=0, verbose=False):
        self.fnn = fnn
        self.lstm = lstm
        self.voter_hidden = voter_hidden
        self.mode = mode
        self.prefit = prefit
        self.voter_fraction = voter_fraction
        self.voter_blocks = voter_blocks
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.tol = tol
        self.patience = patience
        self.learning_rate = learning_rate
        self.random_state = random_state
        self.verbose = verbose

    def _base_templates(self):
        fnn = self.fnn if self.fnn is not None else FNNClassifier(mode=self.mode)
        lstm = self.lstm if self.lstm is not None else LSTMClassifier(mode=self.mode)
        return fnn, lstm

    def _check_prefit(self, fnn, lstm):
        for name, est in (("fnn", fnn), ("lstm", lstm)):
            check_is_fitted(est, "network_", msg=f"base model {name} is not fitted")
            if est.mode != self.mode:
                raise ValueError(f"base model {name} is in {est.mode!r} mode, ensemble in {self.mode!r}")

    def voter_split(self, n: int):
        """(base rows, voter rows) from contiguous blocks chosen by ``random_state``."""
        if not 0 < self.voter_fraction < 1:
            raise ValueError("voter_fraction must be in (0, 1)")
        n_blocks = min(self.voter_blocks, n)
        if n_blocks < 2:
            raise ValueError("need at least 2 samples to hold out voter data")
        blocks = np.array_split(np.arange(n), n_blocks)
        k = min(n_blocks - 1, max(1, round(self.voter_fraction * n_blocks)))
        rng = np.random.default_rng(self.random_state)
        held = np.zeros(n_blocks, dtype=bool)
        held[rng.choice(n_blocks, size=k, replace=False)] = True
        base = np.concatenate([b for b, h in zip(blocks, held) if not h])
        voter = np.concatenate([b for b, h in zip(blocks, held) if h])
        return base, voter

    @property
    def window(self):
        est = getattr(self, "lstm_", None) or self.lstm
        return est.window if est is not None else DEFAULT_WINDOW

    def base_scores(self, X) -> np.ndarray:
        """Voter input: FNN probabilities then LSTM probabilities."""
        X = check_windows(X, self.window)
        return np.hstack([self.fnn_.predict_proba(X[:, -1]), self.lstm_.predict_proba(X)])

    def fit(self, X, y):
        X = check_windows(X, self.window)
        y = np.asarray(y)
        yi = encode_labels(y, self.mode)
        if len(yi) != len(X) or len(X) == 0:
            raise ValueError("X and y must be non-empty and of equal length")
        fnn, lstm = self._base_templates()
        if self.prefit:
            self._check_prefit(fnn, lstm)
            voter_rows = np.arange(len(X))
        else:
            base_rows, voter_rows = self.voter_split(len(X))
            fnn = clone(fnn).set_params(mode=self.mode)
            lstm = clone(lstm).set_params(mode=self.mode)
            fnn.fit(X[base_rows][:, -1], y[base_rows])
            lstm.fit(X[base_rows], y[base_rows])
        self.fnn_, self.lstm_ = fnn, lstm
        self.classes_ = np.array(classes_for(self.mode))
        self.n_features_in_ = X.shape[-1]
        S = self.base_scores(X[voter_rows])
        rng = np.random.default_rng(self.random_state)
        self.voter_ = nn.MLP(S.shape[1], len(self.classes_), tuple(self.voter_hidden), "relu", rng)
        self.log_ = train_network(
            self.voter_, S, yi[voter_rows], batch_size=self.batch_size,
            max_epochs=self.max_epochs, tol=self.tol, patience=self.patience,
            learning_rate=self.learning_rate, rng=rng, verbose=self.verbose)
        self.loss_curve_ = list(self.log_.train_loss)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "voter_")
        return network_proba(self.voter_, self.base_scores(X))

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[labels_from_proba(proba)]


MODEL_TYPES = {"fnn": FNNClassifier, "lstm": LSTMClassifier, "ensemble": EnsembleClassifier}


def make_model(name: str, mode: str = "multi", **params):
    try:
        cls = MODEL_TYPES[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODEL_TYPES)}") from None
    return cls(mode=mode, **params)


def needs_windows(model) -> bool:
    return not isinstance(model, FNNClassifier)


__all__ = [
    "BINARY_CLASSES", "FNNClassifier", "LSTMClassifier", "EnsembleClassifier", "TrainLog",
    "classes_for", "encode_labels", "stop_epoch", "train_network", "labels_from_proba",
    "check_windows", "make_model", "needs_windows", "ScalerStats",
]
