"""Raster containers, PNG I/O and binary-mask morphology.

Images are stored as numpy arrays indexed ``[row, column]`` (i.e. ``[y, x]``),
which is the row-major layout of the pixel data.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

MIN_SIDE = 3
GRAY_WEIGHTS = (0.299, 0.587, 0.114)
DEFAULT_MASK_THRESHOLD = 10


class ImageFormatError(ValueError):
    """Raised when a file is not a decodable image."""


class DimensionError(ValueError):
    """Raised when a raster is too small or shapes disagree."""


def _frozen(arr):
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ImageRGB:
    """8-bit RGB raster of shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise DimensionError(f"expected (h, w, 3) pixels, got shape {px.shape}")
        if px.shape[0] < MIN_SIDE or px.shape[1] < MIN_SIDE:
            raise DimensionError(
                f"image must be at least {MIN_SIDE}x{MIN_SIDE}, got {px.shape[1]}x{px.shape[0]}"
            )
        if px.dtype != np.uint8:
            if np.any(px < 0) or np.any(px > 255):
                raise ValueError("pixel intensities must lie in [0, 255]")
            px = px.astype(np.uint8)
        object.__setattr__(self, "pixels", _frozen(np.array(px, dtype=np.uint8, copy=True)))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ImageRGB):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ChannelGrid:
    """Single real-valued plane of shape (height, width)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True)
        if v.ndim != 2:
            raise DimensionError(f"expected a 2-D grid, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid values must be finite")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class BinaryMask:
    bits: np.ndarray

    def __post_init__(self):
        b = np.array(self.bits, dtype=bool, copy=True)
        if b.ndim != 2:
            raise DimensionError(f"expected a 2-D mask, got shape {b.shape}")
        object.__setattr__(self, "bits", _frozen(b))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def count(self) -> int:
        return int(self.bits.sum())


def load_png(path) -> ImageRGB:
    """Read a PNG as 8-bit RGB. Alpha is dropped, gray is replicated."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise ImageFormatError(f"{path}: not a PNG (found {im.format})")
            im.load()
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                # 16-bit gray: keep the high byte
                arr = (np.asarray(im, dtype=np.uint32) >> 8).astype(np.uint8)
                arr = np.repeat(arr[:, :, None], 3, axis=2)
            else:
                arr = np.asarray(im.convert("RGB"))
    except FileNotFoundError:
        raise
    except (UnidentifiedImageError, SyntaxError, EOFError) as exc:
        raise ImageFormatError(f"{path}: cannot decode image ({exc})") from exc
    except OSError as exc:
        if path.is_file():
            raise ImageFormatError(f"{path}: cannot decode image ({exc})") from exc
        raise OSError(f"{path}: {exc}") from exc
    return ImageRGB(arr)


def save_png(image: ImageRGB, path) -> None:
    path = Path(path)
    Image.fromarray(np.ascontiguousarray(image.pixels), mode="RGB").save(path, format="PNG")


def split_channels(image: ImageRGB) -> tuple[ChannelGrid, ChannelGrid, ChannelGrid]:
    """Unscaled 0..255 float planes for r, g and b."""
    px = image.pixels.astype(np.float64)
    return ChannelGrid(px[:, :, 0]), ChannelGrid(px[:, :, 1]), ChannelGrid(px[:, :, 2])


def merge_channels(r: ChannelGrid, g: ChannelGrid, b: ChannelGrid) -> ImageRGB:
    """Inverse of :func:`split_channels`; values are rounded and clipped to 8 bits."""
    stack = np.stack([r.values, g.values, b.values], axis=2)
    return ImageRGB(np.clip(np.rint(stack), 0, 255).astype(np.uint8))


def to_grayscale(image: ImageRGB) -> ChannelGrid:
    px = image.pixels.astype(np.float64)
    wr, wg, wb = GRAY_WEIGHTS
    return ChannelGrid(wr * px[:, :, 0] + wg * px[:, :, 1] + wb * px[:, :, 2])


def cell_mask(image: ImageRGB, threshold: float = DEFAULT_MASK_THRESHOLD) -> BinaryMask:
    """Foreground of a cell crop on a black background: max(r, g, b) > threshold."""
    if not 0 <= threshold <= 255:
        raise ValueError(f"threshold must be in [0, 255], got {threshold}")
    return BinaryMask(image.pixels.max(axis=2) > threshold)


def erode_mask(mask: BinaryMask, radius: int) -> BinaryMask:
    """Erode with a (2r+1)-square element; pixels outside the raster count as unset."""
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    if radius == 0:
        return mask
    size = 2 * radius + 1
    out = ndimage.minimum_filter(
        mask.bits.astype(np.uint8), size=size, mode="constant", cval=0
    )
    return BinaryMask(out.astype(bool))


def equivalent_diameter(mask: BinaryMask) -> float:
    return 2.0 * np.sqrt(mask.count() / np.pi)
