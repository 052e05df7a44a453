"""Raster value types, alpha compositing, resampling and PNG I/O."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image as PILImage

# Scribble / trimap sentinel values used both in memory and in 8-bit PNGs.
SCRIBBLE_BACKGROUND = 0
SCRIBBLE_UNLABELED = 128
SCRIBBLE_FOREGROUND = 255

TRIMAP_BACKGROUND = 0
TRIMAP_UNKNOWN = 128
TRIMAP_FOREGROUND = 255


class DimensionError(ValueError):
    """Raised when raster operands disagree in size."""


class Image:
    """H x W x 3 float raster with values clamped to [0, 1]."""

    def __init__(self, data: np.ndarray):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 3 or data.shape[2] != 3:
            raise DimensionError(f"expected HxWx3 data, got shape {data.shape}")
        self.data = np.clip(data, 0.0, 1.0)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def copy(self) -> "Image":
        return Image(self.data.copy())


class AlphaMask:
    """H x W float raster with values clamped to [0, 1]."""

    def __init__(self, data: np.ndarray):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2:
            raise DimensionError(f"expected HxW data, got shape {data.shape}")
        self.data = np.clip(data, 0.0, 1.0)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def copy(self) -> "AlphaMask":
        return AlphaMask(self.data.copy())


class ScribbleMap:
    """Ternary per-pixel annotation stored with the PNG sentinels 0/128/255."""

    def __init__(self, labels: np.ndarray):
        labels = np.asarray(labels, dtype=np.uint8)
        if labels.ndim != 2:
            raise DimensionError(f"expected HxW labels, got shape {labels.shape}")
        bad = ~np.isin(labels, (SCRIBBLE_BACKGROUND, SCRIBBLE_UNLABELED, SCRIBBLE_FOREGROUND))
        if bad.any():
            value = int(labels[bad][0])
            raise ValueError(f"invalid scribble value {value}; expected one of 0, 128, 255")
        self.labels = labels

    @classmethod
    def empty(cls, height: int, width: int) -> "ScribbleMap":
        return cls(np.full((height, width), SCRIBBLE_UNLABELED, dtype=np.uint8))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def annotated(self) -> np.ndarray:
        """Boolean mask of the annotated set."""
        return self.labels != SCRIBBLE_UNLABELED

    @property
    def targets(self) -> np.ndarray:
        """Per-pixel target value: 1 for foreground, 0 elsewhere (meaningful on `annotated`)."""
        return (self.labels == SCRIBBLE_FOREGROUND).astype(np.float64)

    def copy(self) -> "ScribbleMap":
        return ScribbleMap(self.labels.copy())


class Trimap:
    """Ternary foreground / background / unknown map."""

    def __init__(self, labels: np.ndarray):
        labels = np.asarray(labels, dtype=np.uint8)
        if labels.ndim != 2:
            raise DimensionError(f"expected HxW labels, got shape {labels.shape}")
        bad = ~np.isin(labels, (TRIMAP_BACKGROUND, TRIMAP_UNKNOWN, TRIMAP_FOREGROUND))
        if bad.any():
            value = int(labels[bad][0])
            raise ValueError(f"invalid trimap value {value}; expected one of 0, 128, 255")
        self.labels = labels

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def foreground(self) -> np.ndarray:
        return self.labels == TRIMAP_FOREGROUND

    @property
    def background(self) -> np.ndarray:
        return self.labels == TRIMAP_BACKGROUND

    @property
    def unknown(self) -> np.ndarray:
        return self.labels == TRIMAP_UNKNOWN


def _check_same_size(a, b, what: str) -> None:
    if (a.height, a.width) != (b.height, b.width):
        raise DimensionError(
            f"{what}: size mismatch {(a.height, a.width)} vs {(b.height, b.width)}"
        )


def composite(fg: Image, bg: Image, alpha: AlphaMask) -> Image:
    """Alpha-blend foreground over background: out = a*F + (1-a)*B per channel."""
    _check_same_size(fg, bg, "composite")
    _check_same_size(fg, alpha, "composite")
    a = alpha.data[:, :, None]
    return Image(a * fg.data + (1.0 - a) * bg.data)


def _resample_array(data: np.ndarray, new_h: int, new_w: int, mode: str) -> np.ndarray:
    if new_h < 1 or new_w < 1:
        raise ValueError(f"target size must be >= 1, got {new_h}x{new_w}")
    h, w = data.shape[:2]
    if mode == "nearest":
        rows = np.minimum((np.arange(new_h) + 0.5) * h / new_h, h - 1).astype(np.int64)
        cols = np.minimum((np.arange(new_w) + 0.5) * w / new_w, w - 1).astype(np.int64)
        return data[rows][:, cols].copy()
    if mode != "bilinear":
        raise ValueError(f"unknown resample mode: {mode!r}")
    # Sample at pixel centers, edge-clamped.
    ys = (np.arange(new_h) + 0.5) * h / new_h - 0.5
    xs = (np.arange(new_w) + 0.5) * w / new_w - 0.5
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)
    wx = np.clip(xs - x0, 0.0, 1.0)
    top = data[y0][:, x0] * (1 - wx)[None, :, None] + data[y0][:, x1] * wx[None, :, None] \
        if data.ndim == 3 else data[y0][:, x0] * (1 - wx) + data[y0][:, x1] * wx
    bot = data[y1][:, x0] * (1 - wx)[None, :, None] + data[y1][:, x1] * wx[None, :, None] \
        if data.ndim == 3 else data[y1][:, x0] * (1 - wx) + data[y1][:, x1] * wx
    if data.ndim == 3:
        return top * (1 - wy)[:, None, None] + bot * wy[:, None, None]
    return top * (1 - wy)[:, None] + bot * wy[:, None]


def resample(value, new_width: int, new_height: int, mode: str = "bilinear"):
    """Resample an Image or AlphaMask to a new size ('bilinear' or 'nearest')."""
    if isinstance(value, Image):
        return Image(_resample_array(value.data, new_height, new_width, mode))
    if isinstance(value, AlphaMask):
        return AlphaMask(_resample_array(value.data, new_height, new_width, mode))
    raise TypeError(f"cannot resample {type(value).__name__}")


def quantize(values: np.ndarray) -> np.ndarray:
    """[0,1] floats to uint8 with round-half-up."""
    return np.floor(np.clip(values, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_png(value, path) -> None:
    """Write an Image, AlphaMask or ScribbleMap as an 8-bit PNG."""
    path = Path(path)
    if isinstance(value, Image):
        raw = quantize(value.data)
        PILImage.fromarray(raw, mode="RGB").save(path, format="PNG")
    elif isinstance(value, AlphaMask):
        raw = quantize(value.data)
        PILImage.fromarray(raw, mode="L").save(path, format="PNG")
    elif isinstance(value, (ScribbleMap, Trimap)):
        PILImage.fromarray(value.labels, mode="L").save(path, format="PNG")
    else:
        raise TypeError(f"cannot save {type(value).__name__}")


def load_image(path) -> Image:
    raw = np.asarray(PILImage.open(path).convert("RGB"), dtype=np.float64)
    return Image(raw / 255.0)


def load_alpha(path) -> AlphaMask:
    raw = np.asarray(PILImage.open(path).convert("L"), dtype=np.float64)
    return AlphaMask(raw / 255.0)


def load_scribbles(path) -> ScribbleMap:
    raw = np.asarray(PILImage.open(path).convert("L"), dtype=np.uint8)
    return ScribbleMap(raw)


def load_trimap(path) -> Trimap:
    raw = np.asarray(PILImage.open(path).convert("L"), dtype=np.uint8)
    return Trimap(raw)
