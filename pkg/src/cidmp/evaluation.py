"""Splitting, confusion-matrix metrics, ROC/PR curves and feature histograms.

Infected is the positive class everywhere in this module.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    tn: int
    fp: int
    fn: int
    tp: int

    def __post_init__(self):
        if min(self.tn, self.fp, self.fn, self.tp) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tn + self.fp + self.fn + self.tp


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f1: float
    confusion: ConfusionMatrix
    degenerate: bool = False

    @property
    def accuracy(self) -> float:
        cm = self.confusion
        return (cm.tp + cm.tn) / cm.total if cm.total else 0.0


@dataclass(frozen=True)
class CurveSeries:
    kind: str  # "roc", "pr" or "pr_vs_threshold"
    points: tuple  # (x, y, threshold) triples; pr_vs_threshold uses (precision, recall, threshold)


def split_dataset(labels, test_fraction=0.2, seed=0):
    """Stratified shuffle split. Returns (train_idx, test_idx), both sorted.

    Each class contributes ``round(test_fraction * n_class)`` test samples.
    """
    y = np.asarray(labels)
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, 0x5E1])
    test = []
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        if len(idx) < 5:
            raise ValueError(f"class {cls} has {len(idx)} samples; at least 5 per class are required")
        n_test = int(round(test_fraction * len(idx)))
        test.append(idx[rng.permutation(len(idx))[:n_test]])
    test = np.sort(np.concatenate(test))
    train = np.setdiff1d(np.arange(len(y)), test)
    return train, test


def confusion(predicted, truth) -> ConfusionMatrix:
    p, t = np.asarray(predicted).ravel(), np.asarray(truth).ravel()
    if len(p) != len(t):
        raise ValueError(f"{len(p)} predictions but {len(t)} labels")
    return ConfusionMatrix(
        tn=int(np.sum((p == 0) & (t == 0))),
        fp=int(np.sum((p == 1) & (t == 0))),
        fn=int(np.sum((p == 0) & (t == 1))),
        tp=int(np.sum((p == 1) & (t == 1))),
    )


def exact_metrics(cm: ConfusionMatrix) -> tuple[Fraction, Fraction, Fraction]:
    """Precision, recall and F1 as exact rationals (0 where undefined)."""
    p = Fraction(cm.tp, cm.tp + cm.fp) if cm.tp + cm.fp else Fraction(0)
    r = Fraction(cm.tp, cm.tp + cm.fn) if cm.tp + cm.fn else Fraction(0)
    f = 2 * p * r / (p + r) if p + r else Fraction(0)
    return p, r, f


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    p, r, f = exact_metrics(cm)
    degenerate = cm.tp + cm.fp == 0 or cm.tp + cm.fn == 0
    return MetricsReport(float(p), float(r), float(f), cm, degenerate)


def _sweep(probas, truth):
    probas = np.asarray(probas, dtype=np.float64).ravel()
    truth = np.asarray(truth).ravel().astype(np.int64)
    if len(probas) != len(truth):
        raise ValueError("probas and labels differ in length")
    if np.any(probas < 0) or np.any(probas > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    distinct = np.unique(probas)[::-1]
    thresholds = [1.0 + 1e-9]
    thresholds += [float(t) for t in distinct if t > 0]
    thresholds.append(0.0)
    # predicted positive iff proba >= threshold
    order = np.argsort(-probas, kind="stable")
    sp, st = probas[order], truth[order]
    rows = []
    for thr in thresholds:
        k = int(np.searchsorted(-sp, -thr, side="right"))
        tp = int(st[:k].sum())
        fp = k - tp
        rows.append((thr, tp, fp))
    return rows, int(truth.sum()), int(len(truth) - truth.sum())


def curves(probas, truth):
    """ROC, precision-recall and precision/recall-vs-threshold series plus ROC AUC.

    Returns ``(roc, pr, pr_vs_threshold, auc)``.
    """
    rows, n_pos, n_neg = _sweep(probas, truth)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes in the ground truth")
    roc, pr, prt = [], [], []
    for thr, tp, fp in rows:
        tpr, fpr = tp / n_pos, fp / n_neg
        recall = tpr
        precision = tp / (tp + fp) if tp + fp else 1.0
        roc.append((fpr, tpr, thr))
        pr.append((recall, precision, thr))
        prt.append((precision, recall, thr))
    xs = np.array([p[0] for p in roc])
    ys = np.array([p[1] for p in roc])
    auc = float(np.sum((xs[1:] - xs[:-1]) * (ys[1:] + ys[:-1]) / 2.0))
    return CurveSeries("roc", tuple(roc)), CurveSeries("pr", tuple(pr)), CurveSeries("pr_vs_threshold", tuple(prt)), auc


@dataclass(frozen=True)
class HistogramTable:
    feature_names: tuple
    edges: tuple  # per feature, bins+1 edges
    counts: dict  # (class_label, feature_name) -> tuple of bin counts


def feature_histograms(X, y, bins=20, feature_names=None) -> HistogramTable:
    """Equal-width histograms over the pooled per-feature range, split by class."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).ravel()
    if X.size == 0 or len(X) == 0:
        raise ValueError("empty dataset")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    names = tuple(feature_names or (f"f{i}" for i in range(X.shape[1])))
    edges, counts = [], {}
    for j, name in enumerate(names):
        lo, hi = float(X[:, j].min()), float(X[:, j].max())
        if hi == lo:
            lo, hi = lo - 0.5, hi + 0.5
        e = np.linspace(lo, hi, bins + 1)
        edges.append(tuple(float(v) for v in e))
        for cls, label in ((0, "uninfected"), (1, "infected")):
            c, _ = np.histogram(X[y == cls, j], bins=e)
            counts[(label, name)] = tuple(int(v) for v in c)
    return HistogramTable(names, tuple(edges), counts)


# -- report writers ------------------------------------------------------------


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def write_confusion_csv(rows, path):
    """``rows`` is a sequence of (classifier name, ConfusionMatrix)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(["classifier", "tn", "fp", "fn", "tp"])
        for name, cm in rows:
            w.writerow([name, cm.tn, cm.fp, cm.fn, cm.tp])


def write_metrics_csv(rows, path):
    """``rows`` is a sequence of (classifier name, MetricsReport)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(["classifier", "precision", "recall", "f1", "accuracy", "degenerate"])
        for name, m in rows:
            w.writerow([name, repr(m.precision), repr(m.recall), repr(m.f1), repr(m.accuracy), int(m.degenerate)])


def write_curve_csv(series: CurveSeries, path):
    cols = {"roc": ("fpr", "tpr"), "pr": ("recall", "precision"), "pr_vs_threshold": ("precision", "recall")}[series.kind]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow([*cols, "threshold"])
        for x, yv, t in series.points:
            w.writerow([repr(x), repr(yv), repr(t)])


def write_curve_dat(series: CurveSeries, path):
    """Whitespace-separated columns for gnuplot."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {series.kind}\n")
        for x, yv, t in series.points:
            fh.write(f"{x!r} {yv!r} {t!r}\n")


def write_histogram_csv(table: HistogramTable, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(["feature", "class", "bin", "lower", "upper", "count"])
        for j, name in enumerate(table.feature_names):
            e = table.edges[j]
            for label in ("uninfected", "infected"):
                for b, c in enumerate(table.counts[(label, name)]):
                    w.writerow([name, label, b, repr(e[b]), repr(e[b + 1]), c])
