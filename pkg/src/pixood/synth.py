"""Synthetic segmentation-model outputs with controllable ID/OOD separability.

Each image has random per-pixel ID classes and one rectangular OOD region.
ID pixels draw their true-class logit from N(delta, 1) and every other logit
from N(0, 1); OOD pixels draw all K logits from N(0, 1). Features for the
Mahalanobis pipeline come from per-class Gaussian clusters, with OOD pixels
drawn around a separate centre.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import OOD_ID, resize_nearest


@dataclass
class SynthConfig:
    height: int = 64
    width: int = 128
    num_classes: int = 19
    delta: float = 2.0
    count: int = 4
    feature_dim: int = 8
    feature_stride: int = 1
    ood_fraction: float = 0.25
    seed: int = 0


@dataclass
class SynthSample:
    labels: np.ndarray  # u16 [H, W]
    logits: np.ndarray  # f32 [H, W, K]
    features: np.ndarray  # f32 [H/s, W/s, D]


def _ood_box(rng, h, w, fraction):
    side = np.sqrt(fraction)
    bh = max(1, int(round(h * side)))
    bw = max(1, int(round(w * side)))
    y0 = int(rng.integers(0, h - bh + 1))
    x0 = int(rng.integers(0, w - bw + 1))
    return slice(y0, y0 + bh), slice(x0, x0 + bw)


def synth_model(cfg: SynthConfig) -> list[SynthSample]:
    if cfg.delta < 0:
        raise ValueError("delta must be >= 0")
    if cfg.num_classes < 2 or cfg.height < 1 or cfg.width < 1 or cfg.count < 1:
        raise ValueError("need K >= 2 and positive dimensions")
    if cfg.feature_stride < 1 or cfg.feature_dim < 1:
        raise ValueError("feature_stride and feature_dim must be >= 1")
    if not 0.0 <= cfg.ood_fraction <= 1.0:
        raise ValueError("ood_fraction must be in [0, 1]")
    rng = np.random.default_rng(cfg.seed)
    k, d = cfg.num_classes, cfg.feature_dim
    centres = rng.normal(0.0, 3.0, size=(k + 1, d))  # last row: OOD centre
    fh = -(-cfg.height // cfg.feature_stride)
    fw = -(-cfg.width // cfg.feature_stride)

    out = []
    for _ in range(cfg.count):
        cls = rng.integers(0, k, size=(cfg.height, cfg.width))
        ood = np.zeros((cfg.height, cfg.width), dtype=bool)
        if cfg.ood_fraction > 0:
            ood[_ood_box(rng, cfg.height, cfg.width, cfg.ood_fraction)] = True
        labels = np.where(ood, OOD_ID, cls).astype(np.uint16)

        logits = rng.standard_normal((cfg.height, cfg.width, k))
        rows, cols = np.nonzero(~ood)
        logits[rows, cols, cls[rows, cols]] += cfg.delta

        small = resize_nearest(labels, fh, fw).astype(np.int64)
        idx = np.where(small == OOD_ID, k, small)
        features = centres[idx] + rng.standard_normal((fh, fw, d))
        out.append(SynthSample(labels, logits.astype(np.float32), features.astype(np.float32)))
    return out
