"""Synthetic OOD images: clipped Gaussian noise and single-octave Perlin noise.

Both return an f32 image ``[H, W, channels]`` in [0, 1] and a u16 label map
that is ``OOD_ID`` everywhere.
"""
from __future__ import annotations

import numpy as np

from .tensor import OOD_ID

GAUSS_CLIP = 3.0

# 8 unit gradient directions
_GRADIENTS = np.array(
    [[np.cos(a), np.sin(a)] for a in np.arange(8) * (np.pi / 4)],
    dtype=np.float64,
)
# |noise| <= sqrt(2)/2 for unit gradients in 2-D
_PERLIN_BOUND = np.sqrt(0.5)


def ood_labels(h: int, w: int) -> np.ndarray:
    return np.full((h, w), OOD_ID, dtype=np.uint16)


def _check_dims(h, w, channels):
    if h < 1 or w < 1 or channels < 1:
        raise ValueError("height, width and channels must be >= 1")


def gen_gaussian_noise(h: int, w: int, channels: int = 3, seed: int = 0):
    _check_dims(h, w, channels)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((h, w, channels), dtype=np.float32)
    np.clip(x, -GAUSS_CLIP, GAUSS_CLIP, out=x)
    img = (x + GAUSS_CLIP) / (2 * GAUSS_CLIP)
    return img.astype(np.float32), ood_labels(h, w)


def fade(t):
    return t * t * t * (t * (t * 6 - 15) + 10)


def perlin2d(h: int, w: int, cell: int, perm: np.ndarray) -> np.ndarray:
    """Raw 2-D gradient noise in [-sqrt(2)/2, sqrt(2)/2] with lattice spacing ``cell``."""
    p = np.concatenate([perm, perm])
    ys = (np.arange(h) + 0.5) / cell
    xs = (np.arange(w) + 0.5) / cell
    yi = np.floor(ys).astype(np.int64)
    xi = np.floor(xs).astype(np.int64)
    yf = (ys - yi)[:, None]
    xf = (xs - xi)[None, :]
    yi = (yi & 255)[:, None]
    xi = (xi & 255)[None, :]

    def corner(dx, dy):
        h_ = p[p[xi + dx] + ((yi + dy) & 255)] & 7
        g = _GRADIENTS[h_]
        return g[..., 0] * (xf - dx) + g[..., 1] * (yf - dy)

    u, v = fade(xf), fade(yf)
    n00, n10 = corner(0, 0), corner(1, 0)
    n01, n11 = corner(0, 1), corner(1, 1)
    top = n00 + u * (n10 - n00)
    bottom = n01 + u * (n11 - n01)
    return top + v * (bottom - top)


def gen_perlin_noise(h: int, w: int, cell: int = 64, channels: int = 3, seed: int = 0):
    if cell < 2:
        raise ValueError(f"cell must be >= 2, got {cell}")
    _check_dims(h, w, channels)
    rng = np.random.default_rng(seed)
    img = np.empty((h, w, channels), dtype=np.float32)
    for ch in range(channels):
        perm = rng.permutation(256)
        n = perlin2d(h, w, cell, perm)
        img[..., ch] = np.clip(0.5 * (n / _PERLIN_BOUND + 1.0), 0.0, 1.0)
    return img, ood_labels(h, w)
