"""Raster images, color conversion and resampling primitives.

Pixel ``(row i, column j)`` sits at continuous coordinate ``(x=j, y=i)``.
Real values become intensities by round-half-away-from-zero, then clamp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from augsweep import kernels


class ImageError(ValueError):
    """Invalid image shape, channel count or pixel data."""


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """Immutable 8-bit raster of 1 or 3 channels stored as ``(H, W, C)``."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ImageError(f"expected (H, W, 1|3) pixels, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ImageError("image must have at least one pixel")
        if px.dtype != np.uint8:
            if np.issubdtype(px.dtype, np.floating) and not np.all(np.isfinite(px)):
                raise ImageError("non-finite pixel values")
            if px.min() < 0 or px.max() > 255:
                raise ImageError("intensities must lie in [0, 255]")
            px = px.astype(np.uint8)
        px = np.ascontiguousarray(px)
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.pixels.shape

    def plane(self) -> np.ndarray:
        """The single channel of a grayscale image as a 2-D array."""
        if self.channels != 1:
            raise ImageError(f"expected a 1-channel image, got {self.channels} channels")
        return self.pixels[:, :, 0]

    def to_rgb(self) -> "ImageBuffer":
        if self.channels == 3:
            return self
        return ImageBuffer(np.repeat(self.pixels, 3, axis=2))

    def to_gray(self) -> "ImageBuffer":
        if self.channels == 1:
            return self
        num = kernels._gray_numer(self.pixels)
        return ImageBuffer(np.floor(num / 1000.0 + 0.5).astype(np.uint8))

    def __eq__(self, other):
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.pixels, other.pixels)

    __hash__ = None


@dataclass(frozen=True)
class HsvPixel:
    h: float
    s: float
    v: float

    def __post_init__(self):
        if not (0.0 <= self.h < 1.0 and 0.0 <= self.s <= 1.0 and 0.0 <= self.v <= 1.0):
            raise ValueError(f"HSV components out of range: {self}")


def round_intensity(x: float) -> int:
    return int(min(max(math.floor(x + 0.5), 0), 255))


def rgb_to_hsv(r: int, g: int, b: int) -> HsvPixel:
    arr = np.array([[r, g, b]], dtype=np.float64) / 255.0
    h, s, v = kernels.rgb_to_hsv_array(arr)[0]
    return HsvPixel(float(h), float(s), float(v))


def hsv_to_rgb(p: HsvPixel) -> tuple[int, int, int]:
    arr = np.array([[p.h, p.s, p.v]], dtype=np.float64)
    r, g, b = kernels.hsv_to_rgb_array(arr)[0] * 255.0
    return round_intensity(r), round_intensity(g), round_intensity(b)


def bilinear_sample(img: ImageBuffer, x: float, y: float, fill: int = 0) -> tuple[int, ...]:
    """Sample every channel at ``(x, y)``.

    Points outside ``[-0.5, W-0.5] x [-0.5, H-0.5]`` return ``fill``; inside,
    any of the four taps that fall off the raster read as ``fill``.
    """
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError("sample coordinates must be finite")
    h, w, c = img.shape
    if x < -0.5 or x > w - 0.5 or y < -0.5 or y > h - 0.5:
        return (int(fill),) * c
    x0, y0 = math.floor(x), math.floor(y)
    fx, fy = x - x0, y - y0
    px = img.pixels

    def tap(yy, xx, ch):
        if 0 <= xx < w and 0 <= yy < h:
            return float(px[yy, xx, ch])
        return float(fill)

    out = []
    for ch in range(c):
        top = (1.0 - fx) * tap(y0, x0, ch) + fx * tap(y0, x0 + 1, ch)
        bot = (1.0 - fx) * tap(y0 + 1, x0, ch) + fx * tap(y0 + 1, x0 + 1, ch)
        out.append(round_intensity((1.0 - fy) * top + fy * bot))
    return tuple(out)


def resize_array(arr: np.ndarray, height: int, width: int) -> np.ndarray:
    """Edge-clamped bilinear resize of a float ``(H, W[, C])`` array (half-pixel centers)."""
    src = np.asarray(arr, dtype=np.float64)
    h, w = src.shape[:2]
    sy = np.clip((np.arange(height) + 0.5) * h / height - 0.5, 0.0, h - 1.0)
    sx = np.clip((np.arange(width) + 0.5) * w / width - 0.5, 0.0, w - 1.0)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0)[:, None]
    fx = (sx - x0)[None, :]
    if src.ndim == 3:
        fy, fx = fy[..., None], fx[..., None]
    top = (1.0 - fx) * src[y0][:, x0] + fx * src[y0][:, x1]
    bot = (1.0 - fx) * src[y1][:, x0] + fx * src[y1][:, x1]
    return (1.0 - fy) * top + fy * bot


def resize(img: ImageBuffer, height: int, width: int) -> ImageBuffer:
    if (height, width) == (img.height, img.width):
        return img
    out = resize_array(img.pixels, height, width)
    return ImageBuffer(np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8))


def to_tensor(img: ImageBuffer, channels: int = 3, dtype=torch.float32) -> torch.Tensor:
    """``(C, H, W)`` tensor of intensities / 255; grayscale is replicated up to ``channels``."""
    px = img.pixels
    if px.shape[2] == 1 and channels == 3:
        px = np.repeat(px, 3, axis=2)
    arr = np.ascontiguousarray(px.transpose(2, 0, 1), dtype=np.float64) / 255.0
    return torch.from_numpy(arr).to(dtype)


def batch_to_tensor(images, channels: int = 3, dtype=torch.float32) -> torch.Tensor:
    return torch.stack([to_tensor(im, channels, dtype) for im in images])
