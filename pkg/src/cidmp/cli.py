"""Command-line workflow: synth -> extract -> train -> predict / explain / evaluate.

Exit codes: 0 success, 1 usage error, 2 data or format error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import classifiers as clf
from . import evaluation as ev
from . import explain as ex
from . import plotting
from .datagen import (
    INFECTED_DIR,
    UNINFECTED_DIR,
    SynthParams,
    SynthSample,
    corpus_labels,
    sample_rng,
    synth_cell,
    write_corpus,
)
from .features import (
    FEATURE_NAMES,
    CannyParams,
    FeatureRow,
    extract_batch,
    read_feature_cache,
    rows_to_arrays,
    write_feature_cache,
)
from .image_core import ImageFormatError, load_png, save_png

log = logging.getLogger("cidmp")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
DATA_ROOT_ENV = "CIDMP_DATA_ROOT"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def _canny(args) -> CannyParams:
    try:
        return CannyParams(args.canny_sigma, args.canny_low, args.canny_high)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _require_file(path, what):
    if path is None:
        raise UsageError(f"missing {what}")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


def _load_model(path):
    try:
        return clf.load_model(_require_file(path, "model file"))
    except clf.ModelFormatError as exc:
        raise DataError(str(exc)) from exc


def _load_image(path):
    try:
        return load_png(_require_file(path, "image"))
    except (ImageFormatError, ValueError) as exc:
        raise DataError(str(exc)) from exc


def _load_cache(path):
    try:
        rows = read_feature_cache(_require_file(path, "feature cache"))
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    if not rows:
        raise DataError(f"{path}: feature cache is empty")
    return rows


# -- subcommands ---------------------------------------------------------------


def cmd_synth(args):
    params = SynthParams(
        image_side=args.image_side,
        disk_radius_range=(args.disk_radius_min, args.disk_radius_max),
        ring_radius_fraction_range=(args.ring_fraction_min, args.ring_fraction_max),
        ring_thickness=args.ring_thickness,
        noise_sigma=args.noise_sigma,
        seed=args.seed,
    )
    try:
        params.validate()
        labels = corpus_labels(args.n, args.fraction)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    def make(i):
        img, ring = synth_cell(params, labels[i], sample_rng(args.seed, i))
        return SynthSample(i, labels[i], img, ring)

    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        samples = list(pool.map(make, range(args.n)))
    write_corpus(samples, args.out_root)
    n_inf = sum(labels)
    print(f"wrote {args.n} images to {args.out_root}: infected {n_inf}, uninfected {args.n - n_inf}")
    return EXIT_OK


def _dataset_root(args) -> Path:
    root = args.dataset_root or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise UsageError(f"no dataset root given (argument or ${DATA_ROOT_ENV})")
    root = Path(root)
    for d in (INFECTED_DIR, UNINFECTED_DIR):
        if not (root / d).is_dir():
            raise UsageError(f"missing directory {root / d}")
    return root


def cmd_extract(args):
    root = _dataset_root(args)
    params = _canny(args)
    items = []
    for d, label in ((INFECTED_DIR, "infected"), (UNINFECTED_DIR, "uninfected")):
        for p in sorted((root / d).glob("*.png")):
            items.append((p.relative_to(root).as_posix(), label))
    if not items:
        raise DataError(f"no images found under {root}")
    results = extract_batch(
        [root / rel for rel, _ in items], params, workers=args.workers, interior_only=args.alc_interior_only
    )
    rows, skipped = [], 0
    for (rel, label), res in zip(items, results):
        if isinstance(res, Exception):
            skipped += 1
            log.warning("skipping %s: %s", rel, res)
            continue
        rows.append(FeatureRow(rel, label, res))
    if not rows:
        raise DataError(f"no readable images under {root}")
    write_feature_cache(rows, args.cache)
    n_inf = sum(r.label == "infected" for r in rows)
    print(f"infected {n_inf}")
    print(f"uninfected {len(rows) - n_inf}")
    print(f"skipped {skipped}")
    return EXIT_OK


def _table_lines(results):
    lines = [f"{'classifier':<22}{'TN':>7}{'FP':>7}{'FN':>7}{'TP':>7}{'precision':>11}{'recall':>8}{'F1':>8}"]
    for name, m in results:
        cm = m.confusion
        lines.append(
            f"{name:<22}{cm.tn:>7}{cm.fp:>7}{cm.fn:>7}{cm.tp:>7}{m.precision:>11.4f}{m.recall:>8.4f}{m.f1:>8.4f}"
        )
    return lines


def cmd_train(args):
    rows = _load_cache(args.cache)
    X, y = rows_to_arrays(rows)
    if y.min() == y.max():
        raise DataError("feature cache holds a single class")
    try:
        train_idx, test_idx = ev.split_dataset(y, 0.2, args.seed)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    Xtr, ytr, Xte, yte = X[train_idx], y[train_idx], X[test_idx], y[test_idx]

    report_dir = Path(args.report_dir) if args.report_dir else Path(args.model).resolve().parent
    report_dir.mkdir(parents=True, exist_ok=True)

    if args.no_grid:
        best = {"n_estimators": args.n_estimators, "max_depth": args.max_depth, "min_leaf": args.min_leaf}
        table = [clf.CVRow(args.n_estimators, args.max_depth, args.min_leaf, float("nan"), float("nan"))]
    else:
        try:
            result = clf.grid_search_cv(Xtr, ytr, clf.HyperparamGrid(), seed=args.seed, workers=args.workers)
        except ValueError as exc:
            raise DataError(str(exc)) from exc
        best, table = result.best, result.table
    clf.write_cv_table(table, report_dir / "cv_table.csv")

    forest = clf.forest_train(Xtr, ytr, best["n_estimators"], best["max_depth"], best["min_leaf"], seed=args.seed, workers=args.workers)
    clf.save_model(forest, args.model)

    logistic = clf.train_logistic(Xtr, ytr, seed=args.seed)
    tree = clf.train_tree(Xtr, ytr, features_per_split=Xtr.shape[1], rng=clf.tree_rng(args.seed, 0))
    results = [
        ("logistic_regression", ev.metrics(ev.confusion(logistic.predict(Xte), yte))),
        ("decision_tree", ev.metrics(ev.confusion(tree.predict(Xte), yte))),
        ("random_forest", ev.metrics(ev.confusion(forest.predict(Xte), yte))),
    ]
    ev.write_confusion_csv([(n, m.confusion) for n, m in results], report_dir / "holdout_confusion.csv")
    ev.write_metrics_csv(results, report_dir / "holdout_metrics.csv")
    write_feature_cache([rows[i] for i in train_idx], report_dir / "train_features.csv")
    write_feature_cache([rows[i] for i in test_idx], report_dir / "test_features.csv")

    depth = "none" if best["max_depth"] is None else best["max_depth"]
    print(f"selected n_estimators={best['n_estimators']} max_depth={depth} min_leaf={best['min_leaf']}")
    print(f"train {len(train_idx)} test {len(test_idx)}")
    for line in _table_lines(results):
        print(line)
    imp = clf.feature_importance(forest)
    print("importance " + " ".join(f"{n}={v:.4f}" for n, v in zip(FEATURE_NAMES, imp)))
    return EXIT_OK


def _check_features(model, n):
    if getattr(model, "n_features", n) != n:
        raise DataError(f"model expects {model.n_features} features, got {n}")


def cmd_predict(args):
    model = _load_model(args.model)
    image = _load_image(args.image)
    _check_features(model, len(FEATURE_NAMES))
    proba = ex.model_pipeline(model, _canny(args), args.alc_interior_only)(image)
    label = "infected" if proba >= 0.5 else "uninfected"
    print(f"{label} {proba:.4f}")
    return EXIT_OK


def cmd_explain(args):
    model = _load_model(args.model)
    image = _load_image(args.image)
    _check_features(model, len(FEATURE_NAMES))
    if args.threshold < 0:
        raise UsageError("--threshold must be >= 0")
    try:
        segmap = ex.segment_image(image, args.grid_side)
        expl = ex.explain_prediction(
            ex.model_pipeline(model, _canny(args), args.alc_interior_only),
            image,
            segmap,
            n_samples=args.n_samples,
            kernel_width=args.kernel_width,
            seed=args.seed,
            workers=args.workers,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    prefix = args.out_prefix
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)
    save_png(ex.render_overlay(image, expl, args.threshold), f"{prefix}_influence.png")
    save_png(ex.render_significant(image, expl, args.threshold), f"{prefix}_significant.png")
    ex.write_weights_csv(expl, f"{prefix}_weights.csv")
    print(f"label {expl.predicted_label}")
    print(f"proba {expl.predicted_proba:.4f}")
    print(f"fidelity_r2 {expl.local_fidelity_r2:.4f}")
    return EXIT_OK


def cmd_evaluate(args):
    model = _load_model(args.model)
    rows = _load_cache(args.cache)
    X, y = rows_to_arrays(rows)
    _check_features(model, X.shape[1])
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    proba = model.predict_proba(X)
    pred = (proba >= 0.5).astype(np.int64)
    cm = ev.confusion(pred, y)
    m = ev.metrics(cm)
    ev.write_confusion_csv([("model", cm)], out / "confusion.csv")
    ev.write_metrics_csv([("model", m)], out / "metrics.csv")

    auc = None
    if y.min() != y.max():
        roc, pr, prt, auc = ev.curves(proba, y)
        for series in (roc, pr, prt):
            ev.write_curve_csv(series, out / f"{series.kind}.csv")
            ev.write_curve_dat(series, out / f"{series.kind}.dat")
        plotting.plot_roc(roc, auc, out / "roc.png")
        plotting.plot_pr(pr, out / "pr.png")
        plotting.plot_pr_vs_threshold(prt, out / "pr_vs_threshold.png")
    else:
        log.warning("single-class truth: ROC/PR curves skipped")

    hist = ev.feature_histograms(X, y, bins=args.bins, feature_names=FEATURE_NAMES)
    ev.write_histogram_csv(hist, out / "histograms.csv")
    plotting.plot_histograms(hist, out / "histograms.png")

    lines = [
        f"samples {cm.total}",
        f"tn {cm.tn} fp {cm.fp} fn {cm.fn} tp {cm.tp}",
        f"precision {m.precision:.4f}",
        f"recall {m.recall:.4f}",
        f"f1 {m.f1:.4f}",
        f"accuracy {m.accuracy:.4f}",
        "auc n/a" if auc is None else f"auc {auc:.4f}",
    ]
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for line in lines:
        print(line)
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _depth(text):
    return None if text.lower() in ("none", "unbounded") else _positive_int(text)


def _add_common(p, seed=True):
    if seed:
        p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=_positive_int, default=1)


def _add_canny(p):
    p.add_argument("--canny-sigma", type=float, default=1.4)
    p.add_argument("--canny-low", type=float, default=0.1)
    p.add_argument("--canny-high", type=float, default=0.3)
    p.add_argument(
        "--alc-interior-only",
        action="store_true",
        help="sum the Laplacian over interior pixels only",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cidmp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cell dataset")
    p.add_argument("out_root")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--fraction", type=float, default=0.5, help="infected fraction")
    p.add_argument("--image-side", type=int, default=144)
    p.add_argument("--disk-radius-min", type=float, default=44.0)
    p.add_argument("--disk-radius-max", type=float, default=60.0)
    p.add_argument("--ring-fraction-min", type=float, default=0.3)
    p.add_argument("--ring-fraction-max", type=float, default=0.6)
    p.add_argument("--ring-thickness", type=float, default=3.0)
    p.add_argument("--noise-sigma", type=float, default=8.0)
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="compute the feature cache for a dataset")
    p.add_argument("dataset_root", nargs="?", help=f"defaults to ${DATA_ROOT_ENV}")
    p.add_argument("--cache", required=True)
    _add_canny(p)
    _add_common(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train the forest and baselines from a feature cache")
    p.add_argument("--cache", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--report-dir")
    grid = p.add_mutually_exclusive_group()
    grid.add_argument("--grid-search", dest="no_grid", action="store_false", default=False)
    grid.add_argument("--no-grid", dest="no_grid", action="store_true")
    p.add_argument("--n-estimators", type=_positive_int, default=25)
    p.add_argument("--max-depth", type=_depth, default=None)
    p.add_argument("--min-leaf", type=_positive_int, default=1)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="classify one image")
    p.add_argument("--model", required=True)
    p.add_argument("image")
    _add_canny(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("explain", help="explain one prediction")
    p.add_argument("--model", required=True)
    p.add_argument("image")
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--grid-side", type=int, default=7)
    p.add_argument("--n-samples", type=int, default=1000)
    p.add_argument("--kernel-width", type=float, default=0.25)
    p.add_argument("--threshold", type=float, default=0.08)
    _add_canny(p)
    _add_common(p)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("evaluate", help="metrics, curves and histograms for a model on a cache")
    p.add_argument("--model", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--bins", type=int, default=20)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ImageFormatError, clf.ModelFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
