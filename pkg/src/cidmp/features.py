"""The four aggregated cell features: per-channel Laplacian sums and inner-ring length."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import astuple, dataclass

import numpy as np
from scipy import ndimage

from .image_core import (
    DEFAULT_MASK_THRESHOLD,
    BinaryMask,
    ChannelGrid,
    DimensionError,
    ImageRGB,
    cell_mask,
    equivalent_diameter,
    erode_mask,
    split_channels,
    to_grayscale,
)

log = logging.getLogger(__name__)

FEATURE_NAMES = ("alc_r", "alc_g", "alc_b", "ring_len")
CACHE_HEADER = ("path", "label", *FEATURE_NAMES)
LABELS = ("uninfected", "infected")


@dataclass(frozen=True)
class FeatureVector:
    alc_r: float
    alc_g: float
    alc_b: float
    ring_length: int

    def __post_init__(self):
        for v in (self.alc_r, self.alc_g, self.alc_b):
            if not math.isfinite(v):
                raise ValueError("aggregated Laplacian values must be finite")
        if self.ring_length < 0:
            raise ValueError("ring_length must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)


@dataclass(frozen=True)
class CannyParams:
    gaussian_sigma: float = 1.4
    low_fraction: float = 0.1
    high_fraction: float = 0.3

    def __post_init__(self):
        if not self.gaussian_sigma > 0:
            raise ValueError("gaussian_sigma must be > 0")
        if not (0 < self.low_fraction < self.high_fraction <= 1):
            raise ValueError("need 0 < low_fraction < high_fraction <= 1")


def _check_min_size(values: np.ndarray):
    if values.shape[0] < 3 or values.shape[1] < 3:
        raise DimensionError(f"grid must be at least 3x3, got {values.shape[1]}x{values.shape[0]}")


def laplacian(grid: ChannelGrid) -> ChannelGrid:
    """5-point Laplacian with replicated-edge neighbours at the border."""
    v = grid.values
    _check_min_size(v)
    p = np.pad(v, 1, mode="edge")
    out = p[1:-1, 2:] + p[1:-1, :-2] + p[2:, 1:-1] + p[:-2, 1:-1] - 4.0 * v
    return ChannelGrid(out)


def aggregated_laplacian(grid: ChannelGrid, interior_only: bool = False) -> float:
    """Sum of the Laplacian response over the grid.

    With replicated borders the full-grid sum telescopes to zero for any
    input; ``interior_only`` drops the outermost pixel ring from the sum,
    which leaves the net intensity flux across the border.
    """
    lap = laplacian(grid).values
    if interior_only:
        lap = lap[1:-1, 1:-1]
    return float(lap.sum())


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2 * sigma * sigma))
    return k / k.sum()


_SOBEL_SMOOTH = np.array([1.0, 2.0, 1.0])
_SOBEL_DIFF = np.array([-1.0, 0.0, 1.0])


def gradients(grid: ChannelGrid, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian-smoothed Sobel gradients (gx along columns, gy along rows)."""
    k = _gaussian_kernel(sigma)
    smooth = ndimage.correlate1d(grid.values, k, axis=0, mode="nearest")
    smooth = ndimage.correlate1d(smooth, k, axis=1, mode="nearest")
    gx = ndimage.correlate1d(smooth, _SOBEL_DIFF, axis=1, mode="nearest")
    gx = ndimage.correlate1d(gx, _SOBEL_SMOOTH, axis=0, mode="nearest")
    gy = ndimage.correlate1d(smooth, _SOBEL_DIFF, axis=0, mode="nearest")
    gy = ndimage.correlate1d(gy, _SOBEL_SMOOTH, axis=1, mode="nearest")
    return gx, gy


def _non_max_suppression(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    # direction bins: 0 -> horizontal gradient, 1 -> 45deg, 2 -> vertical, 3 -> 135deg
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    bins = (np.floor((angle + 22.5) / 45.0).astype(int)) % 4
    p = np.pad(mag, 1, mode="constant")
    h, w = mag.shape

    def shifted(dy, dx):
        return p[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]

    # (dy, dx) of the neighbour in the gradient direction, for rows growing downward
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    keep = np.zeros_like(mag, dtype=bool)
    for b, (dy, dx) in offsets.items():
        sel = bins == b
        fwd = shifted(dy, dx)
        back = shifted(-dy, -dx)
        # asymmetric comparison thins two-pixel plateaus to one pixel
        keep |= sel & (mag >= fwd) & (mag > back)
    return keep & (mag > 0)


def canny(grid: ChannelGrid, params: CannyParams | None = None) -> BinaryMask:
    """Canny edges with hysteresis thresholds given as fractions of the max gradient."""
    params = params or CannyParams()
    v = grid.values
    _check_min_size(v)
    lo, hi = v.min(), v.max()
    if hi == lo:
        return BinaryMask(np.zeros(v.shape, dtype=bool))
    # affine intensity changes leave the normalised plane unchanged
    norm = ChannelGrid((v - lo) / (hi - lo))
    gx, gy = gradients(norm, params.gaussian_sigma)
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak == 0:
        return BinaryMask(np.zeros(v.shape, dtype=bool))
    thin = _non_max_suppression(mag, gx, gy)
    strong = thin & (mag >= params.high_fraction * peak)
    weak = thin & (mag >= params.low_fraction * peak)
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return BinaryMask(strong)
    has_strong = np.zeros(n + 1, dtype=bool)
    has_strong[np.unique(labels[strong])] = True
    has_strong[0] = False
    return BinaryMask(has_strong[labels])


def boundary_erosion_radius(cell: BinaryMask) -> int:
    return max(2, int(math.floor(0.1 * equivalent_diameter(cell))))


def remove_outer_boundary(edges: BinaryMask, cell: BinaryMask) -> BinaryMask:
    """Drop edges on the cell rim by intersecting with an eroded foreground mask."""
    if edges.bits.shape != cell.bits.shape:
        raise DimensionError(f"edge mask {edges.bits.shape} and cell mask {cell.bits.shape} differ")
    inner = erode_mask(cell, boundary_erosion_radius(cell))
    return BinaryMask(edges.bits & inner.bits)


def inner_ring_edges(image: ImageRGB, params: CannyParams | None = None) -> BinaryMask:
    edges = canny(to_grayscale(image), params)
    return remove_outer_boundary(edges, cell_mask(image, DEFAULT_MASK_THRESHOLD))


def inner_ring_length(image: ImageRGB, params: CannyParams | None = None) -> int:
    return inner_ring_edges(image, params).count()


def extract_features(
    image: ImageRGB, params: CannyParams | None = None, interior_only: bool = False
) -> FeatureVector:
    r, g, b = split_channels(image)
    return FeatureVector(
        aggregated_laplacian(r, interior_only),
        aggregated_laplacian(g, interior_only),
        aggregated_laplacian(b, interior_only),
        inner_ring_length(image, params),
    )


# -- batch extraction and the CSV feature cache --------------------------------


@dataclass(frozen=True)
class FeatureRow:
    path: str
    label: str
    features: FeatureVector


def extract_batch(paths, params=None, workers=1, interior_only=False, loader=None):
    """Extract features for each path, preserving input order.

    Returns a list aligned with ``paths`` holding a FeatureVector or the
    exception raised while reading that image.
    """
    from .image_core import load_png

    loader = loader or load_png

    def one(path):
        try:
            return extract_features(loader(path), params, interior_only)
        except (OSError, ValueError) as exc:
            return exc

    paths = list(paths)
    if workers <= 1:
        return [one(p) for p in paths]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, paths))


def write_feature_cache(rows, path) -> None:
    rows = sorted(rows, key=lambda r: r.path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CACHE_HEADER)
        for row in rows:
            f = row.features
            if row.label not in LABELS:
                raise ValueError(f"bad label {row.label!r}")
            w.writerow([row.path, row.label, repr(f.alc_r), repr(f.alc_g), repr(f.alc_b), f.ring_length])


def read_feature_cache(path) -> list[FeatureRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CACHE_HEADER:
            raise ValueError(f"{path}: unexpected feature cache header {header}")
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(CACHE_HEADER):
                raise ValueError(f"{path}:{lineno}: expected {len(CACHE_HEADER)} fields")
            p, label, ar, ag, ab, ring = rec
            if label not in LABELS:
                raise ValueError(f"{path}:{lineno}: bad label {label!r}")
            rows.append(FeatureRow(p, label, FeatureVector(float(ar), float(ag), float(ab), int(ring))))
    return rows


def rows_to_arrays(rows) -> tuple[np.ndarray, np.ndarray]:
    """Feature matrix (n, 4) and label vector (1 = infected)."""
    X = np.array([r.features.as_array() for r in rows], dtype=np.float64).reshape(-1, len(FEATURE_NAMES))
    y = np.array([1 if r.label == "infected" else 0 for r in rows], dtype=np.int64)
    return X, y
