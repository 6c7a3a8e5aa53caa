"""Confusion matrices, per-class/macro metrics and the evaluation protocols."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are actual classes, columns predicted; float counts allow averages."""

    counts: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError(f"confusion matrix must be square, got {c.shape}")
        if np.any(c < 0):
            raise ValueError("confusion counts must be non-negative")
        object.__setattr__(self, "counts", c)
        labels = tuple(self.labels) or tuple(str(i) for i in range(c.shape[0]))
        if len(labels) != c.shape[0]:
            raise ValueError("one label per class required")
        object.__setattr__(self, "labels", labels)

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else 0.0


def confusion(preds, truths, n_classes: int, labels=()) -> ConfusionMatrix:
    """Count matrix from integer label sequences."""
    preds = np.asarray(preds)
    truths = np.asarray(truths)
    if preds.shape != truths.shape or preds.ndim != 1:
        raise ValueError("preds and truths must be equal-length 1-d sequences")
    for arr in (preds, truths):
        if arr.size and (arr.dtype.kind not in "iu" or arr.min() < 0 or arr.max() >= n_classes):
            raise ValueError(f"labels must be integers in [0, {n_classes})")
    flat = np.bincount(truths.astype(np.intp) * n_classes + preds.astype(np.intp),
                       minlength=n_classes * n_classes)
    return ConfusionMatrix(flat.reshape(n_classes, n_classes).astype(np.float64), labels)


def confusion_from_names(preds, truths, classes) -> ConfusionMatrix:
    index = {c: i for i, c in enumerate(classes)}
    try:
        p = np.array([index[v] for v in np.asarray(preds).astype(str)], dtype=np.intp)
        t = np.array([index[v] for v in np.asarray(truths).astype(str)], dtype=np.intp)
    except KeyError as exc:
        raise ValueError(f"label {exc.args[0]!r} not in {list(classes)}") from None
    return confusion(p, t, len(classes), tuple(classes))


def _ratio(num, den):
    return np.divide(num, den, out=np.zeros_like(num, dtype=np.float64), where=den > 0)


@dataclass
class Metrics:
    labels: tuple
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    zero_support: tuple = ()
    undefined: tuple = ()  # classes whose P or R hit 0/0

    @property
    def present(self) -> np.ndarray:
        return self.support > 0

    def _macro(self, values):
        mask = self.present
        return float(values[mask].mean()) if mask.any() else 0.0

    @property
    def macro_precision(self) -> float:
        return self._macro(self.precision)

    @property
    def macro_recall(self) -> float:
        return self._macro(self.recall)

    @property
    def macro_f1(self) -> float:
        return self._macro(self.f1)

    @property
    def macro(self) -> tuple[float, float, float]:
        return self.macro_precision, self.macro_recall, self.macro_f1

    def binary(self, positive: int = 1) -> tuple[float, float, float]:
        """(precision, recall, F1) of the positive class."""
        return float(self.precision[positive]), float(self.recall[positive]), float(self.f1[positive])

    def of(self, label) -> tuple[float, float, float]:
        k = self.labels.index(label)
        return float(self.precision[k]), float(self.recall[k]), float(self.f1[k])


def metrics(cm: ConfusionMatrix) -> Metrics:
    """Per-class P = TP/(TP+FP), R = TP/(TP+FN), F1 = 2PR/(P+R); 0/0 gives 0.

    Classes with no actual samples are flagged in ``zero_support`` and left
    out of the macro averages.
    """
    c = cm.counts
    tp = np.diag(c)
    predicted = c.sum(axis=0)
    actual = c.sum(axis=1)
    p = _ratio(tp, predicted)
    r = _ratio(tp, actual)
    f1 = _ratio(2 * p * r, p + r)
    zero = tuple(cm.labels[i] for i in np.flatnonzero(actual == 0))
    undefined = tuple(cm.labels[i] for i in np.flatnonzero((predicted == 0) | (actual == 0)))
    return Metrics(cm.labels, p, r, f1, actual, zero, undefined)


# -- aggregation ----------------------------------------------------------------

@dataclass
class Summary:
    """Mean and sample std of per-class and macro metrics over trials."""

    labels: tuple
    mean: dict          # name -> array per class (precision/recall/f1)
    std: dict
    macro_mean: dict    # name -> float
    macro_std: dict
    binary_mean: dict = field(default_factory=dict)
    binary_std: dict = field(default_factory=dict)
    confusion: ConfusionMatrix | None = None
    n_trials: int = 0
    std_defined: bool = True
    trials: list = field(default_factory=list)


def _std(values) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def summarize(trials: list[Metrics], cms: list[ConfusionMatrix] | None = None) -> Summary:
    if not trials:
        raise ValueError("no trials to summarize")
    labels = trials[0].labels
    names = ("precision", "recall", "f1")
    # per-class statistics only over trials where the class occurs
    present = np.array([m.present for m in trials])
    stack = {n: np.where(present, np.array([getattr(m, n) for m in trials]), np.nan) for n in names}
    counts = present.sum(axis=0)
    mean = {n: np.where(counts > 0, np.nansum(v, axis=0) / np.maximum(counts, 1), 0.0)
            for n, v in stack.items()}
    std = {}
    for n, v in stack.items():
        dev = np.nansum((v - mean[n]) ** 2, axis=0)
        std[n] = np.where(counts > 1, np.sqrt(dev / np.maximum(counts - 1, 1)), 0.0)
    macro = {n: [getattr(m, f"macro_{n}") for m in trials] for n in names}
    out = Summary(labels, mean, std,
                  {n: float(np.mean(v)) for n, v in macro.items()},
                  {n: _std(v) for n, v in macro.items()},
                  n_trials=len(trials), std_defined=len(trials) > 1, trials=list(trials))
    if len(labels) == 2:
        for k, n in enumerate(names):
            vals = [m.binary()[k] for m in trials]
            out.binary_mean[n] = float(np.mean(vals))
            out.binary_std[n] = _std(vals)
    if cms:
        out.confusion = ConfusionMatrix(np.mean([c.counts for c in cms], axis=0), labels)
    return out


# -- protocols ------------------------------------------------------------------

class MissingClassError(ValueError):
    pass


def split_indices(n: int, seed: int, train_fraction: float = 0.7):
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    order = np.random.default_rng(seed).permutation(n)
    k = int(round(train_fraction * n))
    return np.sort(order[:k]), np.sort(order[k:])


def repeated_split_eval(make_estimator, X, y, classes, k: int = 10, train_fraction: float = 0.7,
                        seed: int = 0, label_map=None) -> Summary:
    """``k`` seeded random train/test splits, one fresh estimator per split.

    ``make_estimator(split_seed)`` returns an unfitted estimator whose
    ``predict`` yields names from ``classes``. ``label_map`` (optional)
    maps raw labels to the evaluation classes, e.g. attack names to
    ``"Attack"``. Split ``i`` uses seed ``seed + i``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    y = np.asarray(y)
    truth = np.asarray(label_map(y)) if label_map else y
    trials, cms = [], []
    for i in range(k):
        split_seed = seed + i
        tr, te = split_indices(len(y), split_seed, train_fraction)
        missing = sorted(set(np.unique(truth)) - set(np.unique(truth[tr])))
        if missing:
            raise MissingClassError(f"split seed {split_seed}: classes {missing} missing from training split")
        est = make_estimator(split_seed)
        est.fit(X[tr], y[tr])
        cm = confusion_from_names(est.predict(X[te]), truth[te], classes)
        trials.append(metrics(cm))
        cms.append(cm)
    return summarize(trials, cms)


def learning_curve(make_estimator, X, y, sizes, X_test, y_test, trials: int = 10, seed: int = 0):
    """Final train and held-out test loss per training-set size.

    Returns rows ``(size, trial, train_loss, test_loss)``. The estimator
    must provide ``loss(X, y)``.
    """
    n = len(y)
    if any(s < 1 or s > n for s in sizes):
        raise ValueError(f"sizes must lie in [1, {n}]")
    rows = []
    for size in sizes:
        for trial in range(trials):
            rng = np.random.default_rng((seed, size, trial))
            idx = np.sort(rng.choice(n, size=size, replace=False))
            est = make_estimator(trial).fit(X[idx], y[idx])
            rows.append((size, trial, est.loss(X[idx], y[idx]), est.loss(X_test, y_test)))
    return rows


def curve_summary(rows):
    """size -> (train mean, train std, test mean, test std)."""
    out = {}
    for size in sorted({r[0] for r in rows}):
        tr = [r[2] for r in rows if r[0] == size]
        te = [r[3] for r in rows if r[0] == size]
        out[size] = (float(np.mean(tr)), _std(tr), float(np.mean(te)), _std(te))
    return out


def portion_eval(preds, truths, classes, n_portions: int = 10) -> Summary:
    """Split an ordered prediction stream into equal contiguous portions."""
    preds = np.asarray(preds)
    truths = np.asarray(truths)
    if len(preds) != len(truths):
        raise ValueError("preds and truths differ in length")
    if len(preds) < n_portions:
        raise ValueError(f"need at least {n_portions} predictions")
    cms = [confusion_from_names(preds[idx], truths[idx], classes)
           for idx in np.array_split(np.arange(len(preds)), n_portions)]
    return summarize([metrics(c) for c in cms], cms)


# -- reports --------------------------------------------------------------------

def _pct(x: float) -> str:
    return f"{100 * x:.2f}"


def format_table(summary: Summary, title: str = "") -> str:
    """Per-class rows plus a macro row, values as mean±std percentages."""
    head = f"{'class':<10} {'precision':>16} {'recall':>16} {'f1':>16} {'support':>10}"
    lines = [title] if title else []
    lines += [head, "-" * len(head)]
    support = summary.confusion.support if summary.confusion is not None else None
    for k, label in enumerate(summary.labels):
        cells = [f"{_pct(summary.mean[n][k])}±{_pct(summary.std[n][k])}" for n in ("precision", "recall", "f1")]
        sup = f"{support[k]:.1f}" if support is not None else ""
        lines.append(f"{label:<10} {cells[0]:>16} {cells[1]:>16} {cells[2]:>16} {sup:>10}")
    cells = [f"{_pct(summary.macro_mean[n])}±{_pct(summary.macro_std[n])}" for n in ("precision", "recall", "f1")]
    lines.append(f"{'macro':<10} {cells[0]:>16} {cells[1]:>16} {cells[2]:>16}")
    if not summary.std_defined:
        lines.append("(single trial: std undefined, shown as 0)")
    return "\n".join(lines)


def format_comparison(rows: dict) -> str:
    """Macro P/R/F1 per model name, one row each."""
    head = f"{'model':<10} {'precision':>16} {'recall':>16} {'f1':>16}"
    lines = [head, "-" * len(head)]
    for name, s in rows.items():
        cells = [f"{_pct(s.macro_mean[n])}±{_pct(s.macro_std[n])}" for n in ("precision", "recall", "f1")]
        lines.append(f"{name:<10} {cells[0]:>16} {cells[1]:>16} {cells[2]:>16}")
    return "\n".join(lines)


def metrics_csv(summary: Summary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "precision_mean", "precision_std", "recall_mean", "recall_std",
                "f1_mean", "f1_std"])
    for k, label in enumerate(summary.labels):
        w.writerow([label] + [repr(float(v)) for n in ("precision", "recall", "f1")
                              for v in (summary.mean[n][k], summary.std[n][k])])
    w.writerow(["macro"] + [repr(float(v)) for n in ("precision", "recall", "f1")
                            for v in (summary.macro_mean[n], summary.macro_std[n])])
    return buf.getvalue()


def confusion_csv(cm: ConfusionMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["actual\\predicted", *cm.labels])
    for label, row in zip(cm.labels, cm.counts):
        w.writerow([label] + [repr(float(v)) for v in row])
    return buf.getvalue()


def curve_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["size", "split", "train_loss", "test_loss"])
    for size, trial, tr, te in rows:
        w.writerow([size, trial, repr(float(tr)), repr(float(te))])
    return buf.getvalue()


def isclose_pp(a: float, b: float, pp: float) -> bool:
    """``a`` and ``b`` (fractions) agree within ``pp`` percentage points."""
    return math.fabs(100 * (a - b)) <= pp
