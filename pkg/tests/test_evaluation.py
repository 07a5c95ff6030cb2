from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cidmp.evaluation import (
    ConfusionMatrix,
    confusion,
    curves,
    exact_metrics,
    feature_histograms,
    metrics,
    split_dataset,
    write_confusion_csv,
    write_curve_csv,
    write_curve_dat,
    write_histogram_csv,
    write_metrics_csv,
)

# (tn, fp, fn, tp) for the forest, logistic and single-tree rows of the published comparison
PUBLISHED_ROWS = {
    "random_forest": (2258, 497, 397, 2359),
    "logistic_regression": (2361, 394, 671, 2085),
    "decision_tree": (2174, 581, 675, 2081),
}


def mann_whitney_auc(p, t):
    """P(score_pos > score_neg) + 0.5 P(tie), by brute force over all pairs."""
    pos = [a for a, b in zip(p, t) if b == 1]
    neg = [a for a, b in zip(p, t) if b == 0]
    s = 0.0
    for a in pos:
        for b in neg:
            s += 1.0 if a > b else (0.5 if a == b else 0.0)
    return s / (len(pos) * len(neg))


# -- split ---------------------------------------------------------------------


def test_split_balanced_100():
    y = np.array([0, 1] * 50)
    tr, te = split_dataset(y, 0.2, seed=0)
    assert len(tr) == 80 and len(te) == 20
    assert np.sum(y[te] == 1) == 10 and np.sum(y[te] == 0) == 10


@settings(max_examples=30, deadline=None)
@given(st.integers(5, 200), st.integers(5, 200), st.integers(0, 1000))
def test_split_is_a_deterministic_partition(n0, n1, seed):
    y = np.array([0] * n0 + [1] * n1)
    tr, te = split_dataset(y, 0.2, seed)
    assert len(np.intersect1d(tr, te)) == 0
    np.testing.assert_array_equal(np.sort(np.concatenate([tr, te])), np.arange(len(y)))
    for cls, n in ((0, n0), (1, n1)):
        assert abs(np.sum(y[te] == cls) - 0.2 * n) <= 1
    tr2, te2 = split_dataset(y, 0.2, seed)
    np.testing.assert_array_equal(te, te2)


def test_split_full_dataset_size():
    y = np.array([0, 1] * (27558 // 2))
    _, te = split_dataset(y, 0.2, seed=0)
    assert len(te) in (5511, 5512)


def test_split_too_few():
    with pytest.raises(ValueError):
        split_dataset([0] * 4 + [1] * 10)
    with pytest.raises(ValueError):
        split_dataset([0, 1] * 10, test_fraction=1.0)


# -- confusion and metrics -------------------------------------------------------


def test_confusion_cases():
    t = np.array([1] * 6 + [0] * 4)
    assert confusion(t, t) == ConfusionMatrix(4, 0, 0, 6)
    y = np.array([0, 1] * 50)
    assert confusion(np.ones(100), y) == ConfusionMatrix(0, 50, 0, 50)
    with pytest.raises(ValueError):
        confusion([0, 1], [0])


def test_confusion_reconstructs_published_forest_row():
    tn, fp, fn, tp = PUBLISHED_ROWS["random_forest"]
    truth = np.array([0] * (tn + fp) + [1] * (fn + tp))
    pred = np.array([0] * tn + [1] * fp + [0] * fn + [1] * tp)
    assert confusion(pred, truth) == ConfusionMatrix(2258, 497, 397, 2359)


@pytest.mark.parametrize("name", sorted(PUBLISHED_ROWS))
def test_exact_metrics_of_published_rows(name):
    tn, fp, fn, tp = PUBLISHED_ROWS[name]
    p, r, f = exact_metrics(ConfusionMatrix(tn, fp, fn, tp))
    assert p == Fraction(tp, tp + fp)
    assert r == Fraction(tp, tp + fn)
    # harmonic mean in its count form
    assert f == Fraction(2 * tp, 2 * tp + fp + fn)


def test_published_row_values():
    m = metrics(ConfusionMatrix(*PUBLISHED_ROWS["random_forest"]))
    assert (m.precision, m.recall, m.f1) == pytest.approx((0.82598, 0.85595, 0.84070), abs=5e-6)
    m = metrics(ConfusionMatrix(*PUBLISHED_ROWS["logistic_regression"]))
    assert (m.precision, m.recall, m.f1) == pytest.approx((0.84106, 0.75653, 0.79656), abs=5e-6)


def test_metrics_all_correct_and_degenerate():
    m = metrics(ConfusionMatrix(5, 0, 0, 5))
    assert (m.precision, m.recall, m.f1, m.accuracy, m.degenerate) == (1.0, 1.0, 1.0, 1.0, False)
    m = metrics(ConfusionMatrix(5, 0, 5, 0))
    assert (m.precision, m.recall, m.f1, m.degenerate) == (0.0, 0.0, 0.0, True)
    with pytest.raises(ValueError):
        ConfusionMatrix(-1, 0, 0, 0)


# -- curves --------------------------------------------------------------------


def test_auc_perfect_separation():
    _, _, _, auc = curves([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
    assert auc == 1.0
    _, _, _, auc = curves([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1])
    assert auc == 0.0


def test_auc_shuffled_labels():
    rng = np.random.default_rng(0)
    y = np.array([0, 1] * 500)
    probas = rng.permutation(y).astype(float)
    _, _, _, auc = curves(probas, y)
    assert abs(auc - 0.5) <= 0.05


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.7, 1.0]), st.integers(0, 1)), min_size=2, max_size=40))
def test_auc_matches_mann_whitney(pairs):
    p = [a for a, _ in pairs]
    t = [b for _, b in pairs]
    if len(set(t)) < 2:
        with pytest.raises(ValueError):
            curves(p, t)
        return
    roc, pr, prt, auc = curves(p, t)
    assert auc == pytest.approx(mann_whitney_auc(p, t), abs=1e-12)
    assert 0.0 <= auc <= 1.0
    pts = roc.points
    assert pts[0][:2] == (0.0, 0.0) and pts[-1][:2] == (1.0, 1.0)
    for a, b in zip(pts, pts[1:]):
        assert b[0] >= a[0] and b[1] >= a[1]
        assert b[2] < a[2]
    assert pr.points[-1][2] == 0.0 and pr.points[-1][0] == 1.0
    for (r1, p1, _), (p2, r2, _) in zip(pr.points, prt.points):
        assert (r1, p1) == (r2, p2)


def test_curves_reject_bad_probas():
    with pytest.raises(ValueError):
        curves([0.5, 1.5], [0, 1])


# -- histograms ----------------------------------------------------------------


def test_histogram_single_sample():
    h = feature_histograms(np.array([[3.0]]), [1], bins=5)
    assert sorted(h.counts[("infected", "f0")]) == [0, 0, 0, 0, 1]
    assert sum(h.counts[("uninfected", "f0")]) == 0


def test_histogram_conservation():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(73, 4))
    y = (rng.random(73) < 0.4).astype(int)
    h = feature_histograms(X, y, bins=7, feature_names=("a", "b", "c", "d"))
    for name in h.feature_names:
        assert sum(h.counts[("infected", name)]) == y.sum()
        assert sum(h.counts[("uninfected", name)]) == len(y) - y.sum()
        e = h.edges[h.feature_names.index(name)]
        assert len(e) == 8 and np.allclose(np.diff(e), e[1] - e[0])


def test_histogram_errors():
    with pytest.raises(ValueError):
        feature_histograms(np.zeros((0, 4)), [], bins=5)
    with pytest.raises(ValueError):
        feature_histograms(np.zeros((3, 4)), [0, 1, 0], bins=1)


def test_ring_length_histogram_modes_do_not_overlap(corpus_xy):
    X, y = corpus_xy
    h = feature_histograms(X, y, bins=20, feature_names=("alc_r", "alc_g", "alc_b", "ring_len"))
    inf = h.counts[("infected", "ring_len")]
    un = h.counts[("uninfected", "ring_len")]
    assert int(np.argmax(inf)) != int(np.argmax(un))
    assert un[int(np.argmax(inf))] == 0 and inf[int(np.argmax(un))] == 0


# -- writers -------------------------------------------------------------------


def test_writers(tmp_path):
    cm = ConfusionMatrix(1, 2, 3, 4)
    write_confusion_csv([("rf", cm)], tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines() == ["classifier,tn,fp,fn,tp", "rf,1,2,3,4"]
    write_metrics_csv([("rf", metrics(cm))], tmp_path / "m.csv")
    row = (tmp_path / "m.csv").read_text().splitlines()[1].split(",")
    assert float(row[1]) == 4 / 6 and float(row[2]) == 4 / 7
    roc, _, _, _ = curves([0.2, 0.7, 0.9], [0, 1, 1])
    write_curve_csv(roc, tmp_path / "roc.csv")
    write_curve_dat(roc, tmp_path / "roc.dat")
    lines = (tmp_path / "roc.csv").read_text().splitlines()
    assert lines[0] == "fpr,tpr,threshold" and len(lines) == len(roc.points) + 1
    dat = (tmp_path / "roc.dat").read_text().splitlines()
    assert dat[0].startswith("#") and all(len(l.split()) == 3 for l in dat[1:])
    h = feature_histograms(np.array([[1.0], [2.0]]), [0, 1], bins=2)
    write_histogram_csv(h, tmp_path / "h.csv")
    assert len((tmp_path / "h.csv").read_text().splitlines()) == 1 + 2 * 2
