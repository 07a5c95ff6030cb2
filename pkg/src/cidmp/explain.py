"""Local surrogate explanations of the image -> infected-probability pipeline.

Segments are tiles of a regular grid. Each perturbation hides a random
subset of tiles, the full pipeline (feature extraction included) scores the
result, and a kernel-weighted ridge regression on the on/off bits gives one
signed weight per tile: positive pushes toward infected, negative toward
uninfected.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .image_core import ImageRGB, cell_mask

RIDGE_PENALTY = 1e-3
OVERLAY_ALPHA = 0.4
GREEN = np.array([0, 255, 0], dtype=np.float64)
RED = np.array([255, 0, 0], dtype=np.float64)
YELLOW = np.array([255, 255, 0], dtype=np.uint8)


@dataclass(frozen=True, eq=False)
class SegmentMap:
    ids: np.ndarray  # (height, width) int
    n_segments: int

    @property
    def width(self) -> int:
        return self.ids.shape[1]

    @property
    def height(self) -> int:
        return self.ids.shape[0]

    def segment(self, k: int) -> np.ndarray:
        return self.ids == k


def _tile_index(length: int, side: int) -> np.ndarray:
    size = length // side
    return np.minimum(np.arange(length) // size, side - 1)


def segment_image(image: ImageRGB, grid_side: int = 7) -> SegmentMap:
    """Regular grid_side x grid_side tiling; the last row/column absorbs the remainder."""
    if grid_side < 2:
        raise ValueError("grid_side must be >= 2")
    if grid_side > min(image.width, image.height):
        raise ValueError(f"grid_side {grid_side} exceeds image dimensions {image.width}x{image.height}")
    rows = _tile_index(image.height, grid_side)
    cols = _tile_index(image.width, grid_side)
    ids = rows[:, None] * grid_side + cols[None, :]
    ids.setflags(write=False)
    return SegmentMap(ids, grid_side * grid_side)


def fill_color(image: ImageRGB) -> np.ndarray:
    """Mean colour over the cell mask (whole image when the mask is empty)."""
    mask = cell_mask(image).bits
    px = image.pixels.reshape(-1, 3) if not mask.any() else image.pixels[mask]
    return np.rint(px.astype(np.float64).mean(axis=0)).astype(np.uint8)


def perturb(image: ImageRGB, segmap: SegmentMap, on_off, fill=None) -> ImageRGB:
    on_off = np.asarray(on_off, dtype=bool).ravel()
    if len(on_off) != segmap.n_segments:
        raise ValueError(f"on_off has {len(on_off)} entries for {segmap.n_segments} segments")
    if on_off.all():
        return image
    fill = fill_color(image) if fill is None else fill
    px = image.pixels.copy()
    px[~on_off[segmap.ids]] = fill
    return ImageRGB(px)


@dataclass(frozen=True, eq=False)
class Explanation:
    segment_weights: np.ndarray
    pixel_weights: np.ndarray
    predicted_label: str
    predicted_proba: float
    local_fidelity_r2: float
    intercept: float
    segmap: SegmentMap

    @property
    def normalized_weights(self) -> np.ndarray:
        a = np.abs(self.segment_weights)
        m = a.max() if len(a) else 0.0
        return a / m if m > 0 else np.zeros_like(a)

    def top_segments(self, k: int) -> list[int]:
        order = np.argsort(-np.abs(self.segment_weights), kind="stable")
        return [int(i) for i in order[:k]]


def sample_masks(n_samples: int, n_segments: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.random((n_samples, n_segments)) < 0.5
    z[0] = True
    return z


def kernel_weights(z: np.ndarray, kernel_width: float) -> np.ndarray:
    """exp(-d^2 / w^2) with d the cosine distance from the all-ones mask."""
    n_on = z.sum(axis=1).astype(np.float64)
    # cos(z, 1) = |z|_1 / sqrt(|z|_1 * n) for binary z
    cos = np.sqrt(n_on / z.shape[1])
    d = 1.0 - cos
    return np.exp(-(d * d) / (kernel_width * kernel_width))


def weighted_ridge(Z, y, w, penalty=RIDGE_PENALTY):
    """Weighted ridge with an unpenalised intercept.

    Returns (coefficients, intercept, weighted R^2). R^2 is 0 when the
    targets have no weighted variance or the system cannot be solved.
    """
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    sw = w.sum()
    zbar = w @ Z / sw
    ybar = float(w @ y / sw)
    Zc, yc = Z - zbar, y - ybar
    A = (Zc * w[:, None]).T @ Zc + penalty * np.eye(Z.shape[1])
    b = (Zc * w[:, None]).T @ yc
    try:
        coef = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        return np.zeros(Z.shape[1]), ybar, 0.0
    if not np.all(np.isfinite(coef)):
        return np.zeros(Z.shape[1]), ybar, 0.0
    intercept = ybar - float(zbar @ coef)
    ss_tot = float(w @ (yc * yc))
    if ss_tot <= 0:
        return coef, intercept, 0.0
    resid = y - (Z @ coef + intercept)
    return coef, intercept, 1.0 - float(w @ (resid * resid)) / ss_tot


def explain_prediction(
    pipeline,
    image: ImageRGB,
    segmap: SegmentMap | None = None,
    n_samples: int = 1000,
    kernel_width: float = 0.25,
    seed: int = 0,
    workers: int = 1,
) -> Explanation:
    """Fit a local linear surrogate of ``pipeline`` (image -> infected proba) around ``image``."""
    segmap = segmap or segment_image(image)
    n_seg = segmap.n_segments
    if n_samples < n_seg + 1:
        raise ValueError(f"n_samples must be >= {n_seg + 1}")
    if kernel_width <= 0:
        raise ValueError("kernel_width must be > 0")
    if segmap.ids.shape != image.pixels.shape[:2]:
        raise ValueError("segment map and image sizes differ")

    # masks are drawn before any fan-out so the sample set never depends on scheduling
    z = sample_masks(n_samples, n_seg, np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, 0x11E]))
    fill = fill_color(image)

    def score(row):
        return float(pipeline(perturb(image, segmap, row, fill)))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            y = np.array(list(pool.map(score, z)))
    else:
        y = np.array([score(row) for row in z])

    coef, intercept, r2 = weighted_ridge(z.astype(np.float64), y, kernel_weights(z, kernel_width))
    proba = float(y[0])
    expl = Explanation(
        segment_weights=coef,
        pixel_weights=None,
        predicted_label="infected" if proba >= 0.5 else "uninfected",
        predicted_proba=proba,
        local_fidelity_r2=r2,
        intercept=intercept,
        segmap=segmap,
    )
    object.__setattr__(expl, "pixel_weights", expl.normalized_weights[segmap.ids])
    return expl


# -- rendering -----------------------------------------------------------------


def significant_region(explanation: Explanation, threshold: float) -> np.ndarray:
    """Pixels of segments whose normalised weight is nonzero and >= threshold."""
    nw = explanation.normalized_weights
    keep = (nw >= threshold) & (nw > 0)
    return keep[explanation.segmap.ids]


def region_contour(region: np.ndarray) -> np.ndarray:
    """Inner 1-px boundary of a boolean region; outside the raster counts as outside."""
    p = np.pad(region, 1, mode="constant", constant_values=False)
    interior = p[1:-1, 1:-1] & p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return region & ~interior


def render_influence(image: ImageRGB, explanation: Explanation) -> ImageRGB:
    """Red tint over segments pushing toward infected, green over those pushing toward uninfected."""
    w = explanation.segment_weights[explanation.segmap.ids]
    px = image.pixels.astype(np.float64)
    for sel, color in ((w > 0, RED), (w < 0, GREEN)):
        px[sel] = (1 - OVERLAY_ALPHA) * px[sel] + OVERLAY_ALPHA * color
    out = image.pixels.copy()
    tinted = w != 0
    out[tinted] = np.clip(np.rint(px[tinted]), 0, 255).astype(np.uint8)
    return ImageRGB(out)


def render_significant(image: ImageRGB, explanation: Explanation, threshold: float = 0.08) -> ImageRGB:
    """Plain image with a yellow contour around the significant segments."""
    if not 0 <= threshold:
        raise ValueError("threshold must be >= 0")
    out = image.pixels.copy()
    out[region_contour(significant_region(explanation, threshold))] = YELLOW
    return ImageRGB(out)


def render_overlay(image: ImageRGB, explanation: Explanation, significance_threshold: float = 0.08) -> ImageRGB:
    return render_significant(render_influence(image, explanation), explanation, significance_threshold)


def write_weights_csv(explanation: Explanation, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["segment_id", "weight", "normalized_weight"])
        for k, (wt, nw) in enumerate(zip(explanation.segment_weights, explanation.normalized_weights)):
            w.writerow([k, repr(float(wt)), repr(float(nw))])


def model_pipeline(model, canny_params=None, interior_only=False):
    """Image -> infected probability, with feature extraction inside the call."""
    from .features import extract_features

    def predict(image: ImageRGB) -> float:
        x = extract_features(image, canny_params, interior_only).as_array()
        return float(model.predict_proba(x.reshape(1, -1))[0])

    return predict
