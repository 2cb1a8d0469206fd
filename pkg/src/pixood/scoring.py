"""Per-pixel OOD scores from logits, dropout stacks and confidence maps.

Every scorer returns an f32 ``[H, W]`` map in [0, 1] where larger means
"more likely OOD". Raw quantities that are not naturally bounded are divided
by a tight analytic maximum: ``ln K`` for entropy and mutual information,
``K / 4`` for the summed per-class variance.
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage
from scipy.special import entr

# temperatures searched when tuning ODIN
ODIN_TEMPERATURES = (1, 2, 5, 10, 20, 50, 100, 200, 500, 1000)

CONFIDENCE_LAMBDA = 0.5


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis``, computed in float64."""
    x = np.asarray(logits, dtype=np.float64)
    x = x - x.max(axis=axis, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=axis, keepdims=True)


def entropy(p: np.ndarray, axis: int = -1) -> np.ndarray:
    """Shannon entropy in nats, with 0 log 0 = 0."""
    return entr(p).sum(axis=axis)


def _check_logits(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits)
    if logits.ndim != 3:
        raise ValueError(f"logits must be [H, W, K], got shape {logits.shape}")
    if logits.shape[-1] < 2:
        raise ValueError("need at least 2 classes")
    if not np.isfinite(logits).all():
        raise ValueError("logits contain NaN or Inf")
    return logits


def _check_stack(stack: np.ndarray) -> np.ndarray:
    stack = np.asarray(stack)
    if stack.ndim != 4:
        raise ValueError(f"prediction stack must be [T, H, W, K], got shape {stack.shape}")
    if stack.shape[0] < 2:
        raise ValueError("prediction stack needs T >= 2 passes")
    if stack.shape[-1] < 2:
        raise ValueError("need at least 2 classes")
    if not np.isfinite(stack).all():
        raise ValueError("prediction stack contains NaN or Inf")
    return stack


def _as_score(x: np.ndarray) -> np.ndarray:
    return np.clip(x, 0.0, 1.0).astype(np.float32)


def score_max_softmax(logits: np.ndarray) -> np.ndarray:
    logits = _check_logits(logits)
    return _as_score(1.0 - softmax(logits).max(axis=-1))


def score_odin(logits: np.ndarray, temperature: float) -> np.ndarray:
    """Temperature-scaled max softmax (no input perturbation)."""
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    logits = _check_logits(logits)
    return _as_score(1.0 - softmax(logits / float(temperature)).max(axis=-1))


def score_entropy(logits: np.ndarray) -> np.ndarray:
    logits = _check_logits(logits)
    k = logits.shape[-1]
    return _as_score(entropy(softmax(logits)) / np.log(k))


def score_varsum(stack: np.ndarray) -> np.ndarray:
    """Sum over classes of the population variance of the softmax across passes."""
    stack = _check_stack(stack)
    k = stack.shape[-1]
    p = softmax(stack)
    raw = p.var(axis=0).sum(axis=-1)
    return _as_score(raw / (k / 4.0))


def mutual_information(stack: np.ndarray) -> np.ndarray:
    """Raw mutual information (nats): entropy of the mean minus mean entropy."""
    stack = _check_stack(stack)
    p = softmax(stack)
    predictive = entropy(p.mean(axis=0))
    aleatoric = entropy(p).mean(axis=0)
    return predictive - aleatoric


def score_mutual_information(stack: np.ndarray) -> np.ndarray:
    k = np.asarray(stack).shape[-1]
    mi = mutual_information(stack)
    return _as_score(np.clip(mi, 0.0, np.log(k)) / np.log(k))


def score_confidence(confidence: np.ndarray) -> np.ndarray:
    c = np.asarray(confidence, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError(f"confidence map must be [H, W], got shape {c.shape}")
    if not np.isfinite(c).all() or c.min() < 0.0 or c.max() > 1.0:
        raise ValueError("confidence values must lie in [0, 1]")
    return _as_score(1.0 - c)


def confidence_losses(p, y, c, b, lam: float = CONFIDENCE_LAMBDA):
    """Losses of the confidence branch with hints.

    ``p`` and ``y`` are ``[..., K]`` (probabilities, one-hot truth); ``c`` and
    ``b`` are ``[...]`` (confidence and Bernoulli draw). Returns
    ``(L_t, L_c, L)`` averaged over pixels.
    """
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if p.shape != y.shape or p.shape[:-1] != c.shape or c.shape != b.shape:
        raise ValueError("p, y must be [..., K] and c, b must be [...] with matching leading shape")
    if np.any(c <= 0.0):
        raise ValueError("confidence must be > 0: -log(c) is infinite at c = 0")
    if np.any(c > 1.0):
        raise ValueError("confidence must be <= 1")
    c_hint = c * b + (1.0 - b)
    p_hint = c_hint[..., None] * p + (1.0 - c_hint[..., None]) * y
    # y is one-hot, so -log(p') . y reduces to -log of the true-class entry
    l_t = float(np.mean(-np.log((p_hint * y).sum(axis=-1))))
    l_c = float(np.mean(-np.log(c)))
    return l_t, l_c, l_t + lam * l_c


def boundary_suppress(scores: np.ndarray, pred: np.ndarray, radius: int) -> np.ndarray:
    """Replace scores near predicted-class boundaries by their neighbourhood minimum.

    A pixel is a boundary pixel when its (2r+1)x(2r+1) window contains more
    than one predicted class. Never increases any score.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    scores = np.asarray(scores)
    if scores.shape != np.asarray(pred).shape:
        raise ValueError(f"shape mismatch: scores {scores.shape} vs pred {np.asarray(pred).shape}")
    if radius == 0:
        return scores.astype(np.float32, copy=True)
    size = 2 * radius + 1
    boundary = ndimage.maximum_filter(pred, size=size, mode="nearest") != ndimage.minimum_filter(
        pred, size=size, mode="nearest"
    )
    eroded = ndimage.minimum_filter(scores, size=size, mode="nearest")
    return np.where(boundary, eroded, scores).astype(np.float32)
