"""Classical three-pass bloom: prefilter, blurred mip chain, bicubic fold-back.

Images are float arrays of shape (H, W, 3).  Everything here is deterministic
and works in float64 internally; masks are returned as float32.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

LUMA = np.array([0.2126, 0.7152, 0.0722])
HDR_CLAMP = 65472.0


@dataclass(frozen=True)
class BloomParams:
    threshold: float = 0.9
    intensity: float = 1.0
    scatter: float = 0.5
    max_iterations: int = 8
    min_mip: int = 4
    sigma: float = 1.0
    clamp: float = HDR_CLAMP

    def __post_init__(self):
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")
        if not 0 <= self.scatter <= 1:
            raise ValueError("scatter must lie in [0, 1]")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.min_mip < 2:
            raise ValueError("min_mip must be >= 2")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


def luminance(rgb: np.ndarray) -> np.ndarray:
    """Rec. 709 luma of the trailing RGB axis."""
    rgb = np.asarray(rgb, dtype=np.float64)
    return rgb @ LUMA


def prefilter(image: np.ndarray, threshold: float) -> np.ndarray:
    """Keep only the part of each pixel's brightness above ``threshold``, preserving hue."""
    img = np.asarray(image, dtype=np.float64)
    lum = luminance(img)
    scale = np.maximum(lum - threshold, 0.0) / np.maximum(lum, 1e-4)
    return img * scale[..., None]


@lru_cache(maxsize=None)
def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2 * sigma * sigma))
    return k / k.sum()


def _blur_axis(img: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    r = len(kernel) // 2
    n = img.shape[axis]
    out = np.zeros_like(img)
    idx = np.arange(n)
    for t, wt in enumerate(kernel):
        out += wt * np.take(img, np.clip(idx + t - r, 0, n - 1), axis=axis)
    return out


def gaussian_blur_separable(image: np.ndarray, sigma: float = 1.0) -> np.ndarray:
    """Horizontal then vertical Gaussian pass, clamp-to-edge."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    k = gaussian_kernel(float(sigma))
    img = np.asarray(image, dtype=np.float64)
    return _blur_axis(_blur_axis(img, k, 1), k, 0)


def downsample_half(image: np.ndarray) -> np.ndarray:
    """2x2 box average; odd trailing rows/columns are dropped."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[0] // 2, img.shape[1] // 2
    if h < 1 or w < 1:
        raise ValueError(f"cannot halve an image of extent {img.shape[:2]}")
    img = img[: 2 * h, : 2 * w]
    return 0.25 * (img[0::2, 0::2] + img[0::2, 1::2] + img[1::2, 0::2] + img[1::2, 1::2])


def build_mip_chain(prefiltered: np.ndarray, params: BloomParams = BloomParams()) -> list[np.ndarray]:
    """Blur the level, halve it, repeat while the halved level stays >= min_mip.

    Level 0 is the blurred full-resolution image; every level is blurred.
    """
    h, w = prefiltered.shape[:2]
    if min(h, w) < params.min_mip:
        raise ValueError(f"image extent {(h, w)} is below min_mip {params.min_mip}")
    levels = [gaussian_blur_separable(prefiltered, params.sigma)]
    while len(levels) < params.max_iterations + 1:
        cur = levels[-1]
        if min(cur.shape[0], cur.shape[1]) // 2 < params.min_mip:
            break
        levels.append(gaussian_blur_separable(downsample_half(cur), params.sigma))
    return levels


def _cubic_weights(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Catmull-Rom weights for taps at offsets -1, 0, 1, 2 from floor(src)."""
    t = t[:, None]
    d = np.abs(np.array([-1.0, 0.0, 1.0, 2.0])[None, :] - t)
    near = ((a + 2) * d - (a + 3)) * d * d + 1
    far = ((a * d - 5 * a) * d + 8 * a) * d - 4 * a
    return np.where(d <= 1, near, np.where(d < 2, far, 0.0))


@lru_cache(maxsize=None)
def bicubic_matrix(src: int, dst: int) -> np.ndarray:
    """(dst, src) resampling matrix, half-pixel centres, clamped taps."""
    pos = (np.arange(dst) + 0.5) * src / dst - 0.5
    base = np.floor(pos).astype(int)
    wts = _cubic_weights(pos - base)
    m = np.zeros((dst, src))
    for tap in range(4):
        np.add.at(m, (np.arange(dst), np.clip(base + tap - 1, 0, src - 1)), wts[:, tap])
    m.setflags(write=False)
    return m


def bicubic_upsample(image: np.ndarray, height: int, width: int) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    if height < h or width < w:
        raise ValueError(f"target extent {(height, width)} is smaller than source {(h, w)}")
    if (height, width) == (h, w):
        return img.copy()
    my, mx = bicubic_matrix(h, height), bicubic_matrix(w, width)
    return np.einsum("yh,hwc,xw->yxc", my, img, mx, optimize=True)


def bloom_mask(image: np.ndarray, params: BloomParams = BloomParams()) -> np.ndarray:
    """Brightness mask (glow only) for an (H, W, 3) image."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {img.shape}")
    if min(img.shape[:2]) < params.min_mip:
        raise ValueError(f"image extent {img.shape[:2]} is below min_mip {params.min_mip}")
    levels = build_mip_chain(prefilter(np.minimum(img, params.clamp), params.threshold), params)
    acc = levels[-1]
    for level in reversed(levels[:-1]):
        up = bicubic_upsample(acc, level.shape[0], level.shape[1])
        acc = level + params.scatter * (up - level)
    return np.maximum(acc, 0.0).astype(np.float32)


def compose(image: np.ndarray, mask: np.ndarray, intensity: float = 1.0) -> np.ndarray:
    if image.shape != mask.shape:
        raise ValueError(f"image {image.shape} and mask {mask.shape} extents differ")
    return np.clip(np.asarray(image, np.float64) + intensity * np.asarray(mask, np.float64), 0.0, 1.0).astype(np.float32)
