"""Synthetic single-cell images: a stained disk, optionally carrying a parasite ring."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .image_core import ImageRGB, save_png

INFECTED_DIR = "Parasitized"
UNINFECTED_DIR = "Uninfected"
GROUND_TRUTH_DIR = "ground_truth"


@dataclass(frozen=True)
class SynthParams:
    image_side: int = 144
    disk_radius_range: tuple[float, float] = (44.0, 60.0)
    ring_radius_fraction_range: tuple[float, float] = (0.3, 0.6)
    ring_thickness: float = 3.0
    noise_sigma: float = 8.0
    base_color: tuple[int, int, int] = (200, 120, 120)
    ring_color: tuple[int, int, int] = (90, 40, 110)
    center_jitter: float = 2.0
    seed: int = 0

    def validate(self):
        lo, hi = self.disk_radius_range
        flo, fhi = self.ring_radius_fraction_range
        if not 0 < lo <= hi:
            raise ValueError(f"bad disk_radius_range {self.disk_radius_range}")
        if not 0.2 < flo <= fhi < 0.7:
            raise ValueError(f"ring_radius_fraction_range must lie in (0.2, 0.7), got {self.ring_radius_fraction_range}")
        if self.ring_thickness <= 0:
            raise ValueError("ring_thickness must be > 0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if fhi * hi + self.ring_thickness + self.center_jitter >= lo:
            raise ValueError("ring does not fit strictly inside the smallest disk")
        if 2 * (hi + self.center_jitter) + 2 > self.image_side:
            raise ValueError("disk does not fit inside the image")
        for c in (self.base_color, self.ring_color):
            if len(c) != 3 or not all(0 <= v <= 255 for v in c):
                raise ValueError(f"bad color {c}")
        return self


@dataclass(frozen=True)
class CellGeometry:
    center: tuple[float, float]
    disk_radius: float
    ring_center: tuple[float, float] | None = None
    ring_radius: float | None = None


def _distance(shape, center):
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]].astype(np.float64)
    return np.hypot(yy - center[0], xx - center[1])


def sample_geometry(params: SynthParams, infected: bool, rng: np.random.Generator) -> CellGeometry:
    mid = (params.image_side - 1) / 2.0
    j = params.center_jitter
    cy, cx = mid + rng.uniform(-j, j), mid + rng.uniform(-j, j)
    radius = rng.uniform(*params.disk_radius_range)
    if not infected:
        return CellGeometry((cy, cx), radius)
    frac = rng.uniform(*params.ring_radius_fraction_range)
    ry, rx = cy + rng.uniform(-j, j), cx + rng.uniform(-j, j)
    return CellGeometry((cy, cx), radius, (ry, rx), frac * radius)


def render_cell(params: SynthParams, geom: CellGeometry, rng: np.random.Generator | None = None):
    """Rasterise a geometry; returns (image, ring mask). Noise needs ``rng``."""
    side = params.image_side
    disk = _distance((side, side), geom.center) <= geom.disk_radius
    ring = np.zeros_like(disk)
    if geom.ring_radius is not None:
        d = _distance((side, side), geom.ring_center)
        half = params.ring_thickness / 2.0
        ring = (d >= geom.ring_radius - half) & (d < geom.ring_radius + half) & disk
    px = np.zeros((side, side, 3), dtype=np.float64)
    px[disk] = params.base_color
    px[ring] = params.ring_color
    if params.noise_sigma > 0:
        if rng is None:
            raise ValueError("noise requires an rng")
        noise = rng.normal(0.0, params.noise_sigma, size=px.shape)
        # segmented crops have a zeroed background, so only the cell is noisy
        px[disk] += noise[disk]
    px = np.clip(np.rint(px), 0, 255).astype(np.uint8)
    return ImageRGB(px), ring


def synth_cell(params: SynthParams, infected: bool, rng: np.random.Generator):
    """Draw one synthetic cell; returns (ImageRGB, ground-truth ring mask as bool array)."""
    params.validate()
    geom = sample_geometry(params, infected, rng)
    return render_cell(params, geom, rng)


def sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


@dataclass(frozen=True)
class SynthSample:
    index: int
    infected: bool
    image: ImageRGB
    ring_mask: np.ndarray

    @property
    def name(self) -> str:
        return f"cell_{self.index:05d}.png"


def corpus_labels(n: int, infected_fraction: float) -> list[bool]:
    if n < 2:
        raise ValueError("corpus needs at least 2 samples")
    if not 0 <= infected_fraction <= 1:
        raise ValueError("infected_fraction must lie in [0, 1]")
    n_inf = int(round(n * infected_fraction))
    # interleave classes so that prefixes stay roughly balanced
    order = np.argsort((np.arange(n) * n_inf) % n, kind="stable")
    labels = [False] * n
    for i in order[:n_inf]:
        labels[int(i)] = True
    return labels


def synth_corpus(params: SynthParams, n: int, infected_fraction: float = 0.5, seed: int | None = None):
    """Generate ``n`` samples; sample ``i`` depends only on (seed, i)."""
    params.validate()
    seed = params.seed if seed is None else seed
    out = []
    for i, infected in enumerate(corpus_labels(n, infected_fraction)):
        img, ring = synth_cell(params, infected, sample_rng(seed, i))
        out.append(SynthSample(i, infected, img, ring))
    return out


def write_corpus(samples, root) -> list[Path]:
    """Write the Parasitized/Uninfected/ground_truth directory layout."""
    root = Path(root)
    for d in (INFECTED_DIR, UNINFECTED_DIR, GROUND_TRUTH_DIR):
        (root / d).mkdir(parents=True, exist_ok=True)
    written = []
    for s in samples:
        target = root / (INFECTED_DIR if s.infected else UNINFECTED_DIR) / s.name
        save_png(s.image, target)
        gt = np.repeat((s.ring_mask.astype(np.uint8) * 255)[:, :, None], 3, axis=2)
        save_png(ImageRGB(gt), root / GROUND_TRUTH_DIR / s.name)
        written.append(target)
    return written


def with_seed(params: SynthParams, seed: int) -> SynthParams:
    return replace(params, seed=seed)
