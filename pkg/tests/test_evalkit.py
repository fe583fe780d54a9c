import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ldedfusion.evalkit import (
    ConfusionMatrix,
    RunFailed,
    RunStats,
    accuracy,
    binary_accuracy,
    confusion,
    multi_run,
    stratified_split,
)


def naive_counts(preds, truths, n=3):
    out = [[0] * n for _ in range(n)]
    for p, t in zip(preds, truths):
        out[t][p] += 1
    return np.array(out)


# --- split ------------------------------------------------------------------------------

def test_split_5450():
    labels = np.repeat([0, 1, 2], [2300, 2250, 900])
    train, test = stratified_split(labels, 0.8, seed=0)
    assert len(train) == 4360 and len(test) == 1090
    for c, n in zip(range(3), (2300, 2250, 900)):
        assert abs(np.sum(labels[train] == c) - round(0.8 * n)) <= 1


@given(st.lists(st.integers(0, 2), min_size=6, max_size=300), st.floats(0.05, 0.95), st.integers(0, 2**31))
@settings(max_examples=60, deadline=None)
def test_split_properties(labels, frac, seed):
    y = np.array(labels)
    _, counts = np.unique(y, return_counts=True)
    if counts.min() < 2:
        with pytest.raises(ValueError):
            stratified_split(y, frac, seed)
        return
    train, test = stratified_split(y, frac, seed)
    assert len(np.intersect1d(train, test)) == 0
    assert np.array_equal(np.sort(np.concatenate([train, test])), np.arange(len(y)))
    assert len(train) == round(frac * len(y))
    for c in np.unique(y):
        n = np.sum(y == c)
        assert abs(np.sum(y[train] == c) - frac * n) <= 1 + 1e-9


def test_split_seeding():
    y = np.repeat([0, 1, 2], [50, 40, 30])
    a = stratified_split(y, 0.8, 1)
    b = stratified_split(y, 0.8, 1)
    c = stratified_split(y, 0.8, 2)
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
    assert not np.array_equal(a[0], c[0])
    assert [np.sum(y[a[0]] == k) for k in range(3)] == [np.sum(y[c[0]] == k) for k in range(3)]


@pytest.mark.parametrize("frac", [0.0, 1.0, -0.2])
def test_split_fraction_validation(frac):
    with pytest.raises(ValueError):
        stratified_split([0, 0, 1, 1], frac)


def test_split_tiny_class_rejected():
    with pytest.raises(ValueError, match=r"\[2\]"):
        stratified_split([0, 0, 1, 1, 2], 0.5)


# --- confusion and accuracy -------------------------------------------------------------------

def test_confusion_vs_naive_oracle():
    rng = np.random.default_rng(0)
    p, t = rng.integers(0, 3, 200), rng.integers(0, 3, 200)
    cm = confusion(p, t)
    assert np.array_equal(cm.counts, naive_counts(p, t))
    assert np.array_equal(cm.counts.sum(axis=1), np.bincount(t, minlength=3))
    assert accuracy(cm) == np.mean(p == t)


def test_confusion_perfect_and_single_column():
    t = np.array([0, 1, 2, 2, 1])
    cm = confusion(t, t)
    assert np.array_equal(cm.counts, np.diag(np.bincount(t)))
    assert accuracy(cm) == 1.0
    col = confusion(np.zeros(5, int), t).counts
    assert np.all(col[:, 1:] == 0) and col[:, 0].sum() == 5


def test_confusion_length_mismatch():
    with pytest.raises(ValueError):
        confusion([0, 1], [0])


def test_binary_formula():
    assert binary_accuracy(TP=1, TN=1, FP=1, FN=1) == 0.5
    assert binary_accuracy(TP=3, TN=5, FP=0, FN=2) == 0.8
    with pytest.raises(ValueError):
        binary_accuracy(0, 0, 0, 0)


def test_accuracy_2x2_equals_binary_formula():
    cm = ConfusionMatrix(np.array([[7, 2], [3, 8]]), ("neg", "pos"))
    r = cm.one_vs_rest(1)
    assert (r["TP"], r["TN"], r["FP"], r["FN"]) == (8, 7, 2, 3)
    assert accuracy(cm) == binary_accuracy(**r)


@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=200))
def test_one_vs_rest_totals(pairs):
    p, t = zip(*pairs)
    cm = confusion(p, t)
    assert accuracy(cm) == np.mean(np.array(p) == np.array(t))
    for c in range(3):
        assert sum(cm.one_vs_rest(c).values()) == len(pairs)


def test_empty_matrix_accuracy():
    with pytest.raises(ValueError):
        accuracy(ConfusionMatrix(np.zeros((3, 3), int)))


def test_report_dict():
    cm = confusion([0, 1, 1, 2], [0, 1, 2, 2])
    d = cm.to_dict()
    assert d["accuracy"] == 0.75
    assert d["recall"] == {"defect_free": 1.0, "defective": 1.0, "laser_off": 0.5}
    assert d["one_vs_rest_accuracy"]["laser_off"] == 0.75


# --- multi-run ----------------------------------------------------------------------------------

def _constant(seed):
    return 0.9


def _seeded(seed):
    return confusion([seed % 3], [0])


def test_multi_run_constant():
    s = multi_run(_constant, 5, seed=3)
    assert s.seeds == [3, 4, 5, 6, 7]
    assert s.mean == pytest.approx(0.9) and s.std == 0.0


def test_multi_run_two_values():
    vals = {0: 0.9, 1: 1.0}
    s = multi_run(lambda seed: vals[seed], 2)
    assert s.mean == pytest.approx(0.95)
    assert s.std == pytest.approx(0.0707, abs=1e-4)
    assert s.std == pytest.approx(np.sqrt(0.005), rel=1e-12)


def test_multi_run_confusion_results_and_report():
    s = multi_run(_seeded, 3)
    assert s.accuracies == [1.0, 0.0, 0.0]
    d = s.to_dict()
    assert d["confusion"]["counts"][0] == [1, 1, 1]
    assert [r["seed"] for r in d["runs"]] == [0, 1, 2]


def test_multi_run_parallel_matches_serial():
    assert multi_run(_seeded, 4, jobs=2).accuracies == multi_run(_seeded, 4).accuracies


def test_multi_run_failure_names_seed():
    def exp(seed):
        if seed == 12:
            raise ArithmeticError("diverged")
        return 1.0

    with pytest.raises(RunFailed) as info:
        multi_run(exp, 5, seed=10)
    assert info.value.seed == 12 and "12" in str(info.value)


def test_multi_run_needs_two():
    with pytest.raises(ValueError):
        multi_run(_constant, 1)


def test_runstats_recomputable():
    s = RunStats([0.91, 0.95, 0.93])
    assert s.mean == pytest.approx(np.mean(s.accuracies))
    assert s.std == pytest.approx(np.std(s.accuracies, ddof=1))
