import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import confusion_matrix as sk_confusion
from sklearn.metrics import precision_recall_fscore_support

from omni_ids import evaluation as ev
from omni_ids.evaluation import ConfusionMatrix, MissingClassError, confusion, metrics


def binary_cm(tp, fn, fp, tn):
    # rows actual (Normal, Attack), columns predicted
    return ConfusionMatrix(np.array([[tn, fp], [fn, tp]]), ("Normal", "Attack"))


# Reference confusion counts averaged over 10 splits, with the rounded
# precision/recall/F1 (percent) they must reproduce.
REFERENCE = [
    (dict(tp=19_741.3, fn=30.7, fp=0.6, tn=69_845.4), (99.996, 99.84, 99.92), 0.01),
    (dict(tp=13_169.6, fn=13_510.4, fp=5_044.7, tn=28_668.3), (73.0, 49.0, 58.0), 0.7),
]


@pytest.mark.parametrize("counts,centers,tol_pp", REFERENCE)
def test_reference_counts_reproduce_rounded_metrics(counts, centers, tol_pp):
    got = metrics(binary_cm(**counts)).binary()
    for g, c in zip(got, centers):
        assert ev.isclose_pp(g, c / 100, tol_pp), (g, c)


@pytest.mark.parametrize("counts,expected", [
    (REFERENCE[0][0], (99.997, 99.845, 99.920)),
    (REFERENCE[1][0], (72.30, 49.36, 58.67)),
])
def test_reference_counts_exact_arithmetic(counts, expected):
    got = metrics(binary_cm(**counts)).binary()
    for g, e in zip(got, expected):
        assert abs(100 * g - e) <= 0.01


labels_st = st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=200)


@settings(max_examples=200)
@given(labels_st)
def test_matches_sklearn(pairs):
    p, t = map(np.array, zip(*pairs))
    cm = confusion(p, t, 5)
    np.testing.assert_array_equal(cm.counts, sk_confusion(t, p, labels=range(5)))
    m = metrics(cm)
    P, R, F, S = precision_recall_fscore_support(t, p, labels=range(5), zero_division=0)
    np.testing.assert_allclose(m.precision, P)
    np.testing.assert_allclose(m.recall, R)
    np.testing.assert_allclose(m.f1, F)
    np.testing.assert_array_equal(m.support, S)
    present = S > 0
    assert m.macro_f1 == pytest.approx(F[present].mean())


@given(labels_st, st.randoms())
def test_permutation_invariant(pairs, rnd):
    p, t = map(np.array, zip(*pairs))
    perm = list(range(len(p)))
    rnd.shuffle(perm)
    a = metrics(confusion(p, t, 5))
    b = metrics(confusion(p[perm], t[perm], 5))
    np.testing.assert_array_equal(a.f1, b.f1)


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=300))
def test_accuracy_consistent(pairs):
    p, t = map(np.array, zip(*pairs))
    cm = confusion(p, t, 2)
    assert cm.accuracy() == np.mean(p == t)
    assert cm.total == len(p)


def test_diagonal_is_perfect():
    m = metrics(confusion([0, 1, 2, 2], [0, 1, 2, 2], 3))
    assert m.macro == (1.0, 1.0, 1.0)


def test_all_normal_predictor_single_column():
    cm = confusion([0, 0, 0, 0], [0, 1, 2, 1], 3)
    assert np.count_nonzero(cm.counts.sum(axis=0)) == 1


def test_zero_support_flagged_and_excluded():
    m = metrics(ConfusionMatrix(np.array([[5, 0, 0], [1, 4, 0], [0, 0, 0]]), ("a", "b", "c")))
    assert m.zero_support == ("c",)
    assert "c" in m.undefined
    assert m.of("c") == (0.0, 0.0, 0.0)
    assert m.macro_recall == pytest.approx((1.0 + 0.8) / 2)


def test_confusion_validation():
    with pytest.raises(ValueError):
        confusion([0, 3], [0, 1], 3)
    with pytest.raises(ValueError):
        confusion([0, 1], [0], 2)
    with pytest.raises(ValueError):
        ConfusionMatrix(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        ConfusionMatrix(-np.ones((2, 2)))


def test_confusion_from_names_unknown():
    with pytest.raises(ValueError, match="Bogus"):
        ev.confusion_from_names(["Bogus"], ["Normal"], ("Normal", "Attack"))


# -- protocols --------------------------------------------------------------------

class MajorityClassifier:
    def fit(self, X, y):
        vals, counts = np.unique(y, return_counts=True)
        self.label_ = vals[counts.argmax()]
        return self

    def predict(self, X):
        return np.full(len(X), self.label_)


class Oracle:
    """Predicts the label hidden in column 0."""

    names = np.array(["Normal", "Attack"])

    def fit(self, X, y):
        return self

    def predict(self, X):
        return self.names[X[:, 0].astype(int)]


def _xy(n=200, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    return np.column_stack([y, rng.normal(size=n)]), np.array(["Normal", "Attack"])[y]


def test_repeated_split_deterministic_trainer_has_zero_std():
    X, y = _xy()
    s = ev.repeated_split_eval(lambda seed: Oracle(), X, y, ("Normal", "Attack"), k=5)
    assert s.n_trials == 5
    assert s.macro_mean["f1"] == 1.0
    assert s.macro_std["f1"] == 0.0
    assert s.confusion.total == pytest.approx(60)


def test_repeated_split_averages_confusion():
    X, y = _xy(203)
    s = ev.repeated_split_eval(lambda seed: MajorityClassifier(), X, y, ("Normal", "Attack"), k=4)
    # held-out size is constant; per-class counts vary between splits so the average is fractional
    assert s.confusion.total == pytest.approx(61)
    assert not np.all(s.confusion.counts == np.round(s.confusion.counts))


def test_single_split_std_flag():
    X, y = _xy()
    s = ev.repeated_split_eval(lambda seed: Oracle(), X, y, ("Normal", "Attack"), k=1)
    assert not s.std_defined
    assert s.macro_std["f1"] == 0.0
    assert "std undefined" in ev.format_table(s)


def test_missing_class_names_seed():
    X = np.zeros((50, 2))
    y = np.array(["Normal"] * 49 + ["Attack"])
    with pytest.raises(MissingClassError, match=r"split seed \d+"):
        ev.repeated_split_eval(lambda s: Oracle(), X, y, ("Normal", "Attack"), k=10, seed=0)


def test_split_indices_partition():
    tr, te = ev.split_indices(100, 3)
    assert len(tr) == 70 and len(te) == 30
    assert sorted(np.concatenate([tr, te])) == list(range(100))
    np.testing.assert_array_equal(ev.split_indices(100, 3)[0], tr)


def test_summary_mean_over_present_trials_only():
    a = metrics(confusion([0, 1], [0, 1], 3))        # class 2 absent
    b = metrics(confusion([0, 2, 1], [0, 2, 2], 3))  # class 2 present, recall 0.5
    s = ev.summarize([a, b])
    assert s.mean["recall"][2] == pytest.approx(0.5)
    assert s.std["recall"][2] == 0.0


class LossModel:
    def __init__(self, seed):
        self.seed = seed

    def fit(self, X, y):
        self.n_ = len(X)
        return self

    def loss(self, X, y):
        return 1.0 / self.n_


def test_learning_curve_rows():
    X, y = np.zeros((100, 2)), np.zeros(100)
    rows = ev.learning_curve(LossModel, X, y, [10, 50], X, y, trials=3)
    assert [(r[0], r[1]) for r in rows] == [(10, 0), (10, 1), (10, 2), (50, 0), (50, 1), (50, 2)]
    summ = ev.curve_summary(rows)
    assert summ[10][0] == pytest.approx(0.1) and summ[50][1] == 0.0
    assert ev.curve_csv(rows).splitlines()[0] == "size,split,train_loss,test_loss"
    with pytest.raises(ValueError):
        ev.learning_curve(LossModel, X, y, [101], X, y)
    assert len(ev.learning_curve(LossModel, X, y, [20], X, y, trials=1)) == 1


def test_portion_eval():
    truth = np.array(["Normal"] * 50 + ["Attack"] * 50)
    pred = truth.copy()
    pred[:10] = "Attack"  # errors only in the first portion
    s = ev.portion_eval(pred, truth, ("Normal", "Attack"), n_portions=10)
    assert s.n_trials == 10
    assert s.trials[0].macro_f1 < 1.0
    assert all(t.macro_f1 == 1.0 for t in s.trials[1:])
    with pytest.raises(ValueError):
        ev.portion_eval(pred[:5], truth[:5], ("Normal", "Attack"))


def test_reports():
    X, y = _xy()
    s = ev.repeated_split_eval(lambda seed: Oracle(), X, y, ("Normal", "Attack"), k=2)
    rows = ev.metrics_csv(s).splitlines()
    assert rows[0].startswith("class,precision_mean")
    assert [r.split(",")[0] for r in rows[1:]] == ["Normal", "Attack", "macro"]
    cm_rows = ev.confusion_csv(s.confusion).splitlines()
    assert cm_rows[0] == "actual\\predicted,Normal,Attack"
    table = ev.format_comparison({"FNN": s, "LSTM": s})
    assert "FNN" in table and "100.00±0.00" in table


def test_isclose_pp():
    assert ev.isclose_pp(0.9992, 0.9991, 0.01)
    assert not ev.isclose_pp(0.9992, 0.9990, 0.01)
