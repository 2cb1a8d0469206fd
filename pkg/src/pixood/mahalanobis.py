"""Mahalanobis scoring on penultimate-layer feature maps.

Each spatial location ``i`` of the feature map gets its own class mean
``mu[c, i]``; the covariance ``sigma[c]`` is shared by all locations of a
class. Scores are the minimum class distance, standardised with training-set
statistics, squashed with a logistic sigmoid, and resized bilinearly to the
output resolution.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

from .tensor import IGNORE_ID, OOD_ID, atomic_write_bytes, load_tensor, resize_bilinear, resize_nearest, save_tensor

log = logging.getLogger(__name__)

REG_LAMBDA = 1e-6
INVERSE_TOL = 1e-4


class SingularCovarianceError(np.linalg.LinAlgError):
    pass


class StatsFormatError(ValueError):
    pass


@dataclass
class ClassStats:
    """Fitted per-class statistics.

    ``mu`` is ``[C, H', W', D]``, ``sigma`` ``[C, D, D]`` (already
    regularised), ``counts`` the number of training pixels per class.
    Classes with zero count are ignored when scoring.
    """

    mu: np.ndarray
    sigma: np.ndarray
    counts: np.ndarray
    norm_mu: float = 0.0
    norm_s: float = 1.0
    reg_lambda: float = REG_LAMBDA
    sigma_inv: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.mu.ndim != 4:
            raise ValueError(f"mu must be [C, H, W, D], got {self.mu.shape}")
        c, _, _, d = self.mu.shape
        if self.sigma.shape != (c, d, d) or self.counts.shape != (c,):
            raise ValueError("sigma must be [C, D, D] and counts [C]")
        if not self.norm_s > 0:
            raise ValueError("norm_s must be positive")
        if self.sigma_inv is None:
            self.sigma_inv = _invert(self.sigma, self.present)

    @property
    def num_classes(self) -> int:
        return self.mu.shape[0]

    @property
    def spatial_shape(self) -> tuple[int, int]:
        return self.mu.shape[1], self.mu.shape[2]

    @property
    def depth(self) -> int:
        return self.mu.shape[3]

    @property
    def present(self) -> np.ndarray:
        return self.counts > 0

    @property
    def dropped(self) -> list[int]:
        return [int(c) for c in np.flatnonzero(~self.present)]


def _invert(sigma: np.ndarray, present: np.ndarray) -> np.ndarray:
    d = sigma.shape[-1]
    eye = np.eye(d)
    inv = np.tile(eye, (sigma.shape[0], 1, 1))
    for c in np.flatnonzero(present):
        try:
            inv_c = np.linalg.inv(sigma[c])
        except np.linalg.LinAlgError as e:
            raise SingularCovarianceError(f"covariance of class {c} is singular") from e
        if not np.isfinite(inv_c).all() or np.abs(sigma[c] @ inv_c - eye).max() > INVERSE_TOL:
            raise SingularCovarianceError(f"covariance of class {c} is numerically singular")
        inv[c] = inv_c
    return inv


class MahalanobisAccumulator:
    """Streaming sufficient statistics for :func:`fit`.

    Holds, per class, per-location pixel counts and feature sums plus the
    class-wide sum of outer products. Accumulators over disjoint shards can be
    combined with :meth:`merge` in any order.
    """

    def __init__(self, num_classes: int, spatial_shape: tuple[int, int], depth: int):
        h, w = spatial_shape
        self.num_classes = num_classes
        self.spatial_shape = (h, w)
        self.depth = depth
        self.loc_count = np.zeros((num_classes, h, w), dtype=np.int64)
        self.loc_sum = np.zeros((num_classes, h, w, depth), dtype=np.float64)
        self.outer_sum = np.zeros((num_classes, depth, depth), dtype=np.float64)

    def update(self, features: np.ndarray, labels: np.ndarray) -> None:
        features = np.asarray(features, dtype=np.float64)
        h, w = self.spatial_shape
        if features.shape != (h, w, self.depth):
            raise ValueError(f"feature map shape {features.shape} != {(h, w, self.depth)}")
        lab = resize_nearest(np.asarray(labels), h, w).astype(np.int64)
        valid = (lab != IGNORE_ID) & (lab != OOD_ID)
        bad = valid & ((lab < 0) | (lab >= self.num_classes))
        if bad.any():
            raise ValueError(f"label ids out of range: {sorted(set(lab[bad].tolist()))}")
        for c in np.unique(lab[valid]):
            m = lab == c
            f = features[m]
            self.loc_count[c] += m
            self.loc_sum[c][m] += f
            self.outer_sum[c] += f.T @ f

    def merge(self, other: "MahalanobisAccumulator") -> "MahalanobisAccumulator":
        if (other.num_classes, other.spatial_shape, other.depth) != (
            self.num_classes,
            self.spatial_shape,
            self.depth,
        ):
            raise ValueError("cannot merge accumulators of different shapes")
        out = MahalanobisAccumulator(self.num_classes, self.spatial_shape, self.depth)
        out.loc_count = self.loc_count + other.loc_count
        out.loc_sum = self.loc_sum + other.loc_sum
        out.outer_sum = self.outer_sum + other.outer_sum
        return out

    def finalize(self, reg_lambda: float = REG_LAMBDA) -> ClassStats:
        """Means and regularised covariances; normalisation is left at (0, 1)."""
        c_n, d = self.num_classes, self.depth
        counts = self.loc_count.reshape(c_n, -1).sum(axis=1)
        mu = np.zeros_like(self.loc_sum)
        sigma = np.tile(np.eye(d), (c_n, 1, 1))
        for c in range(c_n):
            if counts[c] == 0:
                log.warning("class %d has no training pixels; dropped from scoring", c)
                continue
            n_loc = self.loc_count[c][..., None]
            # locations never labelled c fall back to the class-wide mean
            global_mean = self.loc_sum[c].reshape(-1, d).sum(axis=0) / counts[c]
            mu[c] = np.where(n_loc > 0, self.loc_sum[c] / np.maximum(n_loc, 1), global_mean)
            # sum_j (f - mu_i)(f - mu_i)^T = sum_j f f^T - n_i mu_i mu_i^T per location i
            mu_flat = mu[c].reshape(-1, d)
            n_flat = self.loc_count[c].reshape(-1).astype(np.float64)
            centred = self.outer_sum[c] - (mu_flat * n_flat[:, None]).T @ mu_flat
            cov = 0.5 * (centred + centred.T) / counts[c]
            scale = np.trace(cov) / d
            if scale <= 0:
                scale = 1.0
            sigma[c] = cov + reg_lambda * scale * np.eye(d)
        return ClassStats(mu=mu, sigma=sigma, counts=counts, reg_lambda=reg_lambda)


def distance(features: np.ndarray, stats: ClassStats) -> np.ndarray:
    """Minimum over retained classes of the Mahalanobis distance, ``[H', W']``."""
    features = np.asarray(features, dtype=np.float64)
    h, w = stats.spatial_shape
    if features.shape != (h, w, stats.depth):
        raise ValueError(f"feature map shape {features.shape} != {(h, w, stats.depth)}")
    present = np.flatnonzero(stats.present)
    if present.size == 0:
        raise ValueError("no classes with training pixels")
    best = np.full((h, w), np.inf)
    for c in present:
        diff = features - stats.mu[c]
        q = np.einsum("hwd,de,hwe->hw", diff, stats.sigma_inv[c], diff, optimize=True)
        best = np.minimum(best, q)
    return np.sqrt(np.maximum(best, 0.0))


def normalize(dist: np.ndarray, stats: ClassStats) -> np.ndarray:
    return expit((dist - stats.norm_mu) / stats.norm_s)


def score(features: np.ndarray, stats: ClassStats, out_h: int | None = None, out_w: int | None = None) -> np.ndarray:
    """Sigmoid of the standardised minimum distance, resized to ``(out_h, out_w)``."""
    v = normalize(distance(features, stats), stats)
    h, w = stats.spatial_shape
    return resize_bilinear(v, out_h or h, out_w or w)


def fit(
    features: Sequence[np.ndarray] | Iterable[np.ndarray],
    labels: Sequence[np.ndarray] | Iterable[np.ndarray],
    num_classes: int,
    reg_lambda: float = REG_LAMBDA,
) -> ClassStats:
    """Fit class means, shared covariances and distance normalisation.

    Two passes over the data: the first gathers sufficient statistics, the
    second computes the mean and standard deviation of the minimum distance
    over every location of every training map.
    """
    features = list(features)
    labels = list(labels)
    if len(features) != len(labels) or not features:
        raise ValueError("need one label map per feature map and at least one pair")
    h, w, d = np.asarray(features[0]).shape
    acc = MahalanobisAccumulator(num_classes, (h, w), d)
    for f, lab in zip(features, labels):
        acc.update(f, lab)
    stats = acc.finalize(reg_lambda)
    return with_normalization(stats, features)


def with_normalization(stats: ClassStats, features: Iterable[np.ndarray]) -> ClassStats:
    n = 0
    total = 0.0
    total_sq = 0.0
    dists = []
    for f in features:
        m = distance(f, stats)
        dists.append(m)
        n += m.size
        total += m.sum()
    mean = total / n
    for m in dists:
        total_sq += ((m - mean) ** 2).sum()
    std = float(np.sqrt(total_sq / n))
    if not std > 0:
        log.warning("training distances have zero spread; using unit scale")
        std = 1.0
    return ClassStats(
        mu=stats.mu,
        sigma=stats.sigma,
        counts=stats.counts,
        norm_mu=float(mean),
        norm_s=std,
        reg_lambda=stats.reg_lambda,
        sigma_inv=stats.sigma_inv,
    )


# -- persistence --------------------------------------------------------------


def save_stats(stats: ClassStats, directory: str | os.PathLike) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    c, h, w, d = stats.mu.shape
    manifest = {
        "C": c,
        "H": h,
        "W": w,
        "D": d,
        "counts": [int(n) for n in stats.counts],
        "norm_mu": stats.norm_mu,
        "norm_s": stats.norm_s,
        "reg_lambda": stats.reg_lambda,
    }
    save_tensor(stats.mu.astype(np.float32), directory / "mu.tnsr")
    save_tensor(stats.sigma.astype(np.float32), directory / "sigma.tnsr")
    atomic_write_bytes(directory / "manifest.json", json.dumps(manifest, indent=2).encode())


def load_stats(directory: str | os.PathLike) -> ClassStats:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
        shape = (manifest["C"], manifest["H"], manifest["W"], manifest["D"])
    except (KeyError, json.JSONDecodeError) as e:
        raise StatsFormatError(f"bad stats manifest in {directory}: {e}") from e
    mu = load_tensor(directory / "mu.tnsr")
    sigma = load_tensor(directory / "sigma.tnsr")
    if mu.shape != shape or sigma.shape != (shape[0], shape[3], shape[3]):
        raise StatsFormatError("stored tensors do not match the manifest shape")
    # f32 storage loses symmetry at the last bit
    sigma = sigma.astype(np.float64)
    sigma = 0.5 * (sigma + np.swapaxes(sigma, 1, 2))
    return ClassStats(
        mu=mu,
        sigma=sigma,
        counts=np.asarray(manifest["counts"]),
        norm_mu=float(manifest["norm_mu"]),
        norm_s=float(manifest["norm_s"]),
        reg_lambda=float(manifest["reg_lambda"]),
    )
