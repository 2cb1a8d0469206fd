"""Streaming threshold-sweep evaluation of OOD score maps.

Scores are compared against 400 thresholds spaced evenly on [0, 1]
(inclusive). A pixel is predicted OOD at threshold ``t`` iff ``score >= t``;
it is truly OOD iff its label is ``OOD_ID``. ``IGNORE_ID`` pixels carry no
weight. Counts are additive, so per-image or per-shard sweeps merge into the
same result as one pass over everything.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .tensor import IGNORE_ID, OOD_ID

NUM_THRESHOLDS = 400
THRESHOLDS = np.linspace(0.0, 1.0, NUM_THRESHOLDS)
THRESHOLDS.flags.writeable = False


class UndefinedMetricError(ValueError):
    """The accumulated counts do not support the requested metric."""


@dataclass
class ThresholdSweep:
    """Confusion counts per threshold. ``pos``/``neg`` hold the histogram of
    positive/negative pixels by highest threshold reached."""

    pos_hist: np.ndarray = field(default_factory=lambda: np.zeros(NUM_THRESHOLDS, dtype=np.uint64))
    neg_hist: np.ndarray = field(default_factory=lambda: np.zeros(NUM_THRESHOLDS, dtype=np.uint64))

    def __post_init__(self):
        self.pos_hist = np.asarray(self.pos_hist, dtype=np.uint64)
        self.neg_hist = np.asarray(self.neg_hist, dtype=np.uint64)
        if self.pos_hist.shape != (NUM_THRESHOLDS,) or self.neg_hist.shape != (NUM_THRESHOLDS,):
            raise ValueError(f"sweep histograms must have {NUM_THRESHOLDS} bins")

    @property
    def thresholds(self) -> np.ndarray:
        return THRESHOLDS

    @property
    def positives(self) -> int:
        return int(self.pos_hist.sum())

    @property
    def negatives(self) -> int:
        return int(self.neg_hist.sum())

    @property
    def tp(self) -> np.ndarray:
        return np.cumsum(self.pos_hist[::-1], dtype=np.uint64)[::-1]

    @property
    def fp(self) -> np.ndarray:
        return np.cumsum(self.neg_hist[::-1], dtype=np.uint64)[::-1]

    @property
    def fn(self) -> np.ndarray:
        return np.uint64(self.positives) - self.tp

    @property
    def tn(self) -> np.ndarray:
        return np.uint64(self.negatives) - self.fp

    def __eq__(self, other):
        if not isinstance(other, ThresholdSweep):
            return NotImplemented
        return np.array_equal(self.pos_hist, other.pos_hist) and np.array_equal(self.neg_hist, other.neg_hist)

    def copy(self) -> "ThresholdSweep":
        return ThresholdSweep(self.pos_hist.copy(), self.neg_hist.copy())

    def to_dict(self) -> dict:
        return {"pos_hist": [int(v) for v in self.pos_hist], "neg_hist": [int(v) for v in self.neg_hist]}

    @classmethod
    def from_dict(cls, d: dict) -> "ThresholdSweep":
        return cls(np.array(d["pos_hist"], dtype=np.uint64), np.array(d["neg_hist"], dtype=np.uint64))


def threshold_bins(scores: np.ndarray) -> np.ndarray:
    """Index of the highest threshold each score reaches (``score >= t``)."""
    return np.searchsorted(THRESHOLDS, scores, side="right") - 1


def accumulate(sweep: ThresholdSweep, scores: np.ndarray, truth: np.ndarray) -> ThresholdSweep:
    """Return a new sweep with the pixels of one score map added."""
    scores = np.asarray(scores)
    truth = np.asarray(truth)
    if scores.shape != truth.shape:
        raise ValueError(f"shape mismatch: scores {scores.shape} vs truth {truth.shape}")
    scores = scores.ravel()
    truth = truth.ravel()
    if scores.size and not (np.isfinite(scores).all() and scores.min() >= 0.0 and scores.max() <= 1.0):
        raise ValueError("scores must be finite and within [0, 1]")
    bins = threshold_bins(scores)
    keep = truth != IGNORE_ID
    is_pos = truth == OOD_ID
    pos = np.bincount(bins[keep & is_pos], minlength=NUM_THRESHOLDS).astype(np.uint64)
    neg = np.bincount(bins[keep & ~is_pos], minlength=NUM_THRESHOLDS).astype(np.uint64)
    return ThresholdSweep(sweep.pos_hist + pos, sweep.neg_hist + neg)


def merge(a: ThresholdSweep, b: ThresholdSweep) -> ThresholdSweep:
    return ThresholdSweep(a.pos_hist + b.pos_hist, a.neg_hist + b.neg_hist)


def sweep_of(pairs) -> ThresholdSweep:
    """Accumulate an iterable of ``(scores, truth)`` pairs."""
    s = ThresholdSweep()
    for scores, truth in pairs:
        s = accumulate(s, scores, truth)
    return s


# -- curves -------------------------------------------------------------------


def _require(sweep: ThresholdSweep, positives=True, negatives=False):
    if positives and sweep.positives == 0:
        raise UndefinedMetricError("no OOD (positive) pixels accumulated")
    if negatives and sweep.negatives == 0:
        raise UndefinedMetricError("no in-distribution (negative) pixels accumulated")


def rates(sweep: ThresholdSweep):
    """TPR, FPR, precision and IoU per threshold (float64 arrays, ascending threshold)."""
    tp = sweep.tp.astype(np.float64)
    fp = sweep.fp.astype(np.float64)
    fn = sweep.fn.astype(np.float64)
    p, n = sweep.positives, sweep.negatives
    tpr = tp / p if p else np.full(NUM_THRESHOLDS, np.nan)
    fpr = fp / n if n else np.full(NUM_THRESHOLDS, np.nan)
    predicted = tp + fp
    precision = np.divide(tp, predicted, out=np.ones_like(tp), where=predicted > 0)
    denom = tp + fp + fn
    iou = np.divide(tp, denom, out=np.zeros_like(tp), where=denom > 0)
    return tpr, fpr, precision, iou


def roc_curve(sweep: ThresholdSweep):
    """ROC points ordered by increasing FPR, with (0, 0) and (1, 1) appended."""
    _require(sweep, positives=True, negatives=True)
    tpr, fpr, _, _ = rates(sweep)
    x = np.concatenate([[0.0], fpr[::-1], [1.0]])
    y = np.concatenate([[0.0], tpr[::-1], [1.0]])
    return x, y


def pr_curve(sweep: ThresholdSweep):
    """PR points (recall, precision) ordered by increasing recall."""
    _require(sweep)
    tpr, _, precision, _ = rates(sweep)
    return tpr[::-1].copy(), precision[::-1].copy()


def auroc(sweep: ThresholdSweep) -> float:
    x, y = roc_curve(sweep)
    return float(np.clip(np.trapezoid(y, x), 0.0, 1.0))


def auprc(sweep: ThresholdSweep) -> float:
    """Area under the PR curve, integrated stepwise from recall 0.

    Each recall increment is weighted by the precision at its upper end
    (average precision). Linear interpolation would credit the zero-prediction
    point's precision of 1 across the whole first gap.
    """
    recall, precision = pr_curve(sweep)
    d_recall = np.diff(np.concatenate([[0.0], recall]))
    return float(np.clip((d_recall * precision).sum(), 0.0, 1.0))


@dataclass
class FprAtTpr:
    value: float
    reached: bool


def fpr_at_tpr(sweep: ThresholdSweep, target_tpr: float = 0.95) -> FprAtTpr:
    """FPR at ``target_tpr``, linearly interpolated between bracketing sweep points."""
    _require(sweep, positives=True, negatives=True)
    tpr, fpr, _, _ = rates(sweep)
    above = np.flatnonzero(tpr >= target_tpr)
    if above.size == 0:
        warnings.warn(f"TPR never reaches {target_tpr}; reporting FPR = 1", stacklevel=2)
        return FprAtTpr(1.0, False)
    j = above[-1]  # highest threshold still reaching the target
    if tpr[j] == target_tpr or j == NUM_THRESHOLDS - 1:
        return FprAtTpr(float(fpr[j]), True)
    t_hi, t_lo = tpr[j], tpr[j + 1]
    f_hi, f_lo = fpr[j], fpr[j + 1]
    frac = (target_tpr - t_lo) / (t_hi - t_lo)
    return FprAtTpr(float(f_lo + frac * (f_hi - f_lo)), True)


def max_iou(sweep: ThresholdSweep) -> tuple[float, float]:
    """Maximum IoU over the grid and the smallest threshold attaining it."""
    _require(sweep)
    _, _, _, iou = rates(sweep)
    j = int(np.argmax(iou))
    return float(iou[j]), float(THRESHOLDS[j])


def youden_threshold(sweep: ThresholdSweep) -> float:
    """Smallest grid threshold maximising TPR - FPR."""
    _require(sweep, positives=True, negatives=True)
    tpr, fpr, _, _ = rates(sweep)
    return float(THRESHOLDS[int(np.argmax(tpr - fpr))])


def threshold_gap(sweep: ThresholdSweep) -> float:
    return abs(youden_threshold(sweep) - max_iou(sweep)[1])


def miou(pred: np.ndarray, truth: np.ndarray, num_classes: int) -> float:
    """Mean IoU over classes ``0..C-1`` present in ``truth``; IGNORE pixels excluded."""
    pred = np.asarray(pred).ravel().astype(np.int64)
    truth = np.asarray(truth).ravel().astype(np.int64)
    if pred.shape != truth.shape:
        raise ValueError("shape mismatch between prediction and truth")
    keep = truth != IGNORE_ID
    if not keep.any():
        raise UndefinedMetricError("no non-ignore pixels")
    pred, truth = pred[keep], truth[keep]
    # anything outside 0..C-1 goes to an overflow bin that is never reported
    p = np.where((pred >= 0) & (pred < num_classes), pred, num_classes)
    t = np.where((truth >= 0) & (truth < num_classes), truth, num_classes)
    n = num_classes + 1
    conf = np.bincount(t * n + p, minlength=n * n).reshape(n, n)
    tp = np.diag(conf)[:num_classes].astype(np.float64)
    fn = conf[:num_classes].sum(axis=1) - tp
    fp = conf[:, :num_classes].sum(axis=0) - tp
    present = conf[:num_classes].sum(axis=1) > 0
    if not present.any():
        raise UndefinedMetricError("truth contains no classes in 0..C-1")
    return float(np.mean(tp[present] / (tp + fp + fn)[present]))


# -- reports ------------------------------------------------------------------

METRIC_NAMES = ("AUROC", "AUPRC", "FPRatTPR", "MaxIoU")


@dataclass
class MetricsReport:
    auroc: float | None
    auprc: float | None
    fpr_at_tpr: float | None
    max_iou: float | None
    max_iou_threshold: float | None
    youden_threshold: float | None
    positives: int
    negatives: int
    warnings: list[str] = field(default_factory=list)

    def metrics(self) -> dict:
        return {
            "AUROC": self.auroc,
            "AUPRC": self.auprc,
            "FPRatTPR": self.fpr_at_tpr,
            "MaxIoU": self.max_iou,
        }

    def to_dict(self) -> dict:
        return {
            **self.metrics(),
            "max_iou_threshold": self.max_iou_threshold,
            "youden_threshold": self.youden_threshold,
            "positives": self.positives,
            "negatives": self.negatives,
            "warnings": list(self.warnings),
        }


def _guarded(fn, sweep, notes):
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            out = fn(sweep)
        notes.extend(str(w.message) for w in caught)
        return out
    except UndefinedMetricError as e:
        notes.append(f"{fn.__name__}: {e}")
        return None


def report(sweep: ThresholdSweep) -> MetricsReport:
    """All metrics for one sweep; undefined ones are ``None`` with a note."""
    notes: list[str] = []
    fat = _guarded(fpr_at_tpr, sweep, notes)
    mi = _guarded(max_iou, sweep, notes)
    return MetricsReport(
        auroc=_guarded(auroc, sweep, notes),
        auprc=_guarded(auprc, sweep, notes),
        fpr_at_tpr=None if fat is None else fat.value,
        max_iou=None if mi is None else mi[0],
        max_iou_threshold=None if mi is None else mi[1],
        youden_threshold=_guarded(youden_threshold, sweep, notes),
        positives=sweep.positives,
        negatives=sweep.negatives,
        warnings=sorted(set(notes)),
    )


def sweep_table_csv(sweep: ThresholdSweep) -> str:
    """400-row CSV: threshold, TP, FP, TN, FN, TPR, FPR, precision, IoU."""
    tpr, fpr, precision, iou = rates(sweep)
    tp, fp, tn, fn = sweep.tp, sweep.fp, sweep.tn, sweep.fn
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["threshold", "TP", "FP", "TN", "FN", "TPR", "FPR", "precision", "IoU"])
    for j in range(NUM_THRESHOLDS):
        writer.writerow(
            [
                repr(float(THRESHOLDS[j])),
                int(tp[j]),
                int(fp[j]),
                int(tn[j]),
                int(fn[j]),
                _fmt(tpr[j]),
                _fmt(fpr[j]),
                _fmt(precision[j]),
                _fmt(iou[j]),
            ]
        )
    return buf.getvalue()


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))
