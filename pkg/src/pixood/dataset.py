"""Dataset adaptation: label remapping, filtering, splits, ID/OOD mixing,
per-class score tables and ODIN temperature tuning."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import sweep as sw
from .scoring import ODIN_TEMPERATURES, score_odin
from .tensor import IGNORE_ID, OOD_ID, load_tensor

MIN_PIXELS = 640 * 640

SOURCE_TAGS = ("ID", "OOD-real", "OOD-synthetic")


class UnknownLabelError(ValueError):
    def __init__(self, ids):
        self.ids = sorted(int(i) for i in ids)
        super().__init__(f"label ids not in the source table: {self.ids}")


@dataclass
class LabelMapping:
    """Source-to-target label correspondence.

    ``targets`` maps target class names to ids, ``sources`` source names to
    ids, and ``ambiguous`` lists source names sent to the ignore label.
    """

    targets: dict[str, int]
    sources: dict[str, int]
    ambiguous: set[str] = field(default_factory=set)

    def __post_init__(self):
        self.ambiguous = set(self.ambiguous)
        missing = self.ambiguous - set(self.sources)
        if missing:
            raise ValueError(f"ambiguous names missing from sources: {sorted(missing)}")
        for name, i in {**self.targets, **self.sources}.items():
            if not 0 <= int(i) <= 0xFFFF:
                raise ValueError(f"id for {name!r} does not fit in u16")
        for name, i in self.targets.items():
            if int(i) in (OOD_ID, IGNORE_ID):
                raise ValueError(f"target {name!r} uses a reserved id")

    @classmethod
    def from_json(cls, path: str | os.PathLike) -> "LabelMapping":
        d = json.loads(Path(path).read_text())
        return cls(
            targets={k: int(v) for k, v in d["targets"].items()},
            sources={k: int(v) for k, v in d["sources"].items()},
            ambiguous=set(d.get("ambiguous", [])),
        )

    def map_name(self, name: str) -> int:
        if name in self.ambiguous:
            return IGNORE_ID
        if name in self.targets:
            return int(self.targets[name])
        return OOD_ID

    def lookup_table(self) -> tuple[np.ndarray, np.ndarray]:
        """(lut, known) arrays over all u16 source ids."""
        lut = np.zeros(0x10000, dtype=np.uint16)
        known = np.zeros(0x10000, dtype=bool)
        # reserved ids pass through so remapped maps stay remappable
        for rid in (OOD_ID, IGNORE_ID):
            lut[rid] = rid
            known[rid] = True
        for name, sid in self.sources.items():
            lut[sid] = self.map_name(name)
            known[sid] = True
        return lut, known


def remap_labels(src: np.ndarray, mapping: LabelMapping) -> np.ndarray:
    src = np.asarray(src)
    if src.dtype.kind not in "ui":
        raise TypeError("label maps must be integer")
    if src.size and (src.min() < 0 or src.max() > 0xFFFF):
        raise UnknownLabelError(np.unique(src[(src < 0) | (src > 0xFFFF)]))
    lut, known = mapping.lookup_table()
    ids = src.astype(np.int64)
    unknown = ~known[ids]
    if unknown.any():
        raise UnknownLabelError(np.unique(ids[unknown]))
    return lut[ids]


def size_filter(sizes: Iterable[tuple[int, int]], min_pixels: int = MIN_PIXELS) -> list[int]:
    """Indices of images with strictly more than ``min_pixels`` pixels."""
    return [i for i, (h, w) in enumerate(sizes) if h * w > min_pixels]


def split_dataset(n: int, tune_fraction: float = 0.25, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= tune_fraction <= 1.0:
        raise ValueError("tune_fraction must be in [0, 1]")
    order = np.random.default_rng(seed).permutation(n)
    k = math.floor(tune_fraction * n)
    return np.sort(order[:k]), np.sort(order[k:])


# -- manifests --------------------------------------------------------------


@dataclass
class ManifestEntry:
    labels: Path
    scores: Path | None = None
    logits: Path | None = None
    features: Path | None = None
    image: Path | None = None
    source: str = "ID"
    split: str | None = None


@dataclass
class MixManifest:
    """Entries pairing per-image tensors with truth label maps.

    JSON form::

        {"entries": [{"scores": ..., "labels": ..., "source": "ID", "split": "eval"}],
         "split": {"tune": 0.25, "eval": 0.75}, "seed": 0}

    Relative paths resolve against the manifest's directory.
    """

    entries: list[ManifestEntry]
    split: dict[str, float] = field(default_factory=lambda: {"tune": 0.25, "eval": 0.75})
    seed: int = 0
    root: Path = Path(".")

    def __post_init__(self):
        for e in self.entries:
            if e.source not in SOURCE_TAGS:
                raise ValueError(f"unknown source tag {e.source!r}")
        if self.split and not math.isclose(sum(self.split.values()), 1.0, abs_tol=1e-9):
            raise ValueError("split fractions must sum to 1")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "MixManifest":
        path = Path(path)
        d = json.loads(path.read_text())
        root = path.parent
        entries = []
        for e in d["entries"]:
            entries.append(
                ManifestEntry(
                    labels=root / e["labels"],
                    scores=root / e["scores"] if e.get("scores") else None,
                    logits=root / e["logits"] if e.get("logits") else None,
                    features=root / e["features"] if e.get("features") else None,
                    image=root / e["image"] if e.get("image") else None,
                    source=e.get("source", "ID"),
                    split=e.get("split"),
                )
            )
        return cls(entries, split=d.get("split", {"tune": 0.25, "eval": 0.75}), seed=int(d.get("seed", 0)), root=root)

    def to_dict(self) -> dict:
        def rel(p):
            if p is None:
                return None
            try:
                return str(Path(p).relative_to(self.root))
            except ValueError:
                return str(p)

        out = []
        for e in self.entries:
            item = {"labels": rel(e.labels), "source": e.source}
            for key in ("scores", "logits", "features", "image"):
                if getattr(e, key) is not None:
                    item[key] = rel(getattr(e, key))
            if e.split is not None:
                item["split"] = e.split
            out.append(item)
        return {"entries": out, "split": self.split, "seed": self.seed}

    def select(self, split: str) -> list[ManifestEntry]:
        """Entries of one split. Entries without an explicit split are
        assigned by a seeded shuffle with the manifest's tune fraction."""
        explicit = [e for e in self.entries if e.split is not None]
        if explicit:
            return [e for e in self.entries if e.split == split]
        tune, ev = split_dataset(len(self.entries), self.split.get("tune", 0.25), self.seed)
        idx = tune if split == "tune" else ev
        return [self.entries[i] for i in idx]

    def check_paths(self) -> list[Path]:
        missing = []
        for e in self.entries:
            for p in (e.labels, e.scores, e.logits, e.features, e.image):
                if p is not None and not Path(p).exists():
                    missing.append(Path(p))
        return missing


@dataclass
class MixRatio:
    id_pixels: int
    ood_pixels: int
    ratio: float


def mix_ratio(label_maps: Iterable[np.ndarray]) -> MixRatio:
    """ID:OOD pixel ratio over label maps (IGNORE pixels not counted)."""
    n_id = n_ood = 0
    for lab in label_maps:
        lab = np.asarray(lab)
        n_ood += int((lab == OOD_ID).sum())
        n_id += int(((lab != OOD_ID) & (lab != IGNORE_ID)).sum())
    if n_ood == 0:
        raise ValueError("no OOD pixels: ID:OOD ratio undefined")
    return MixRatio(n_id, n_ood, n_id / n_ood)


def manifest_mix_ratio(manifest: MixManifest) -> MixRatio:
    return mix_ratio(load_tensor(e.labels) for e in manifest.entries)


def per_class_average(
    scores: Sequence[np.ndarray] | Iterable[np.ndarray],
    truths: Sequence[np.ndarray] | Iterable[np.ndarray],
    num_classes: int,
) -> dict[int, float]:
    """Mean score per class id (``0..C-1`` and ``OOD_ID``); absent classes omitted."""
    acc = PerClassAccumulator(num_classes)
    for s, t in zip(scores, truths):
        acc.update(s, t)
    return acc.table()


class PerClassAccumulator:
    def __init__(self, num_classes: int):
        self.num_classes = num_classes
        self.ids = list(range(num_classes)) + [OOD_ID]
        self.sums = np.zeros(0x10000, dtype=np.float64)
        self.counts = np.zeros(0x10000, dtype=np.int64)

    def update(self, scores: np.ndarray, truth: np.ndarray) -> None:
        scores = np.asarray(scores, dtype=np.float64)
        truth = np.asarray(truth).astype(np.int64)
        if scores.shape != truth.shape:
            raise ValueError(f"shape mismatch: {scores.shape} vs {truth.shape}")
        self.sums += np.bincount(truth.ravel(), weights=scores.ravel(), minlength=0x10000)
        self.counts += np.bincount(truth.ravel(), minlength=0x10000)

    def merge(self, other: "PerClassAccumulator") -> "PerClassAccumulator":
        out = PerClassAccumulator(self.num_classes)
        out.sums = self.sums + other.sums
        out.counts = self.counts + other.counts
        return out

    def table(self) -> dict[int, float]:
        return {c: float(self.sums[c] / self.counts[c]) for c in self.ids if self.counts[c] > 0}


def tune_odin(
    pairs: Iterable[tuple[np.ndarray, np.ndarray]],
    temperatures: Sequence[float] = ODIN_TEMPERATURES,
) -> tuple[float, dict[float, float]]:
    """Pick the ODIN temperature with the highest grid AUROC.

    ``pairs`` yields ``(logits [H, W, K], truth [H, W])``. Ties go to the
    smallest temperature. Returns the winner and the AUROC per temperature.
    """
    sweeps = {t: sw.ThresholdSweep() for t in temperatures}
    for logits, truth in pairs:
        for t in temperatures:
            sweeps[t] = sw.accumulate(sweeps[t], score_odin(logits, t), truth)
    any_sweep = next(iter(sweeps.values()))
    if any_sweep.positives == 0 or any_sweep.negatives == 0:
        raise sw.UndefinedMetricError("tune set needs both ID and OOD pixels")
    aurocs = {t: sw.auroc(s) for t, s in sweeps.items()}
    best = min(temperatures, key=lambda t: (-aurocs[t], t))
    return best, aurocs
