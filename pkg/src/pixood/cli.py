"""Command-line entry point: ``pixood <command> ...``.

Exit codes: 0 success, 1 usage, 2 I/O, 3 data-contract violation.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import mahalanobis as maha
from . import noise
from . import scoring
from . import sweep as sw
from .synth import SynthConfig, synth_model
from .tensor import TensorFormatError, atomic_write_bytes, load_tensor, save_tensor

log = logging.getLogger("pixood")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DATA = 0, 1, 2, 3

LOGIT_METHODS = ("max_softmax", "odin", "entropy")
STACK_METHODS = ("varsum", "mutual_information")
METHODS = LOGIT_METHODS + STACK_METHODS + ("confidence", "mahalanobis")


class UsageError(Exception):
    pass


class DataContractError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_json(path, obj) -> None:
    atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


# -- score --------------------------------------------------------------------


def _score_one(x: np.ndarray, args, stats) -> np.ndarray:
    m = args.method
    pred = None
    if m in LOGIT_METHODS:
        if x.ndim != 3 or x.dtype != np.float32:
            raise DataContractError(f"method {m} needs f32 logits [H, W, K]; got {x.dtype} {list(x.shape)}")
        if m == "max_softmax":
            s = scoring.score_max_softmax(x)
        elif m == "odin":
            s = scoring.score_odin(x, args.temperature)
        else:
            s = scoring.score_entropy(x)
        pred = x.argmax(axis=-1)
    elif m in STACK_METHODS:
        if x.ndim != 4 or x.dtype != np.float32:
            raise DataContractError(
                f"method {m} needs an f32 dropout stack [T, H, W, K]; got {x.dtype} {list(x.shape)}"
            )
        s = scoring.score_varsum(x) if m == "varsum" else scoring.score_mutual_information(x)
        pred = scoring.softmax(x).mean(axis=0).argmax(axis=-1)
    elif m == "confidence":
        if x.ndim != 2 or x.dtype != np.float32:
            raise DataContractError(f"method confidence needs an f32 map [H, W]; got {x.dtype} {list(x.shape)}")
        s = scoring.score_confidence(x)
    else:
        if x.ndim != 3 or x.dtype != np.float32:
            raise DataContractError(f"method mahalanobis needs f32 features [H, W, D]; got {x.dtype} {list(x.shape)}")
        out_h, out_w = args.size if args.size else (None, None)
        s = maha.score(x, stats, out_h, out_w)
    if args.radius:
        if pred is None:
            raise UsageError(f"--radius needs a predicted label map; not available for method {m}")
        s = scoring.boundary_suppress(s, pred, args.radius)
    return s


def cmd_score(args) -> int:
    if args.method == "odin" and args.temperature is None:
        raise UsageError("--temperature is required for odin")
    if args.method == "mahalanobis" and not args.stats_dir:
        raise UsageError("--stats-dir is required for mahalanobis")
    if args.radius < 0:
        raise UsageError("--radius must be >= 0")
    stats = maha.load_stats(args.stats_dir) if args.method == "mahalanobis" else None
    out = Path(args.out)
    params = {"temperature": args.temperature, "radius": args.radius}
    if args.size:
        params["size"] = list(args.size)
    for inp in args.inputs:
        inp = Path(inp)
        s = _score_one(load_tensor(inp), args, stats)
        target = out / f"{inp.stem}.tnsr"
        save_tensor(s, target)
        sidecar = {
            "method": args.method,
            "params": params,
            "inputs": {"path": str(inp), "sha256": sha256_file(inp)},
            "output_sha256": sha256_file(target),
            "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        }
        if stats is not None:
            sidecar["stats_dir"] = str(args.stats_dir)
        write_json(out / f"{inp.stem}.json", sidecar)
        print(f"{inp} -> {target} {list(s.shape)}")
    return EXIT_OK


# -- fit-mahalanobis ----------------------------------------------------------


def cmd_fit_mahalanobis(args) -> int:
    manifest = ds.MixManifest.load(args.manifest)
    entries = [e for e in manifest.entries if e.features is not None]
    if not entries:
        raise DataContractError("manifest has no entries with 'features'")
    first = load_tensor(entries[0].features)
    if first.ndim != 3:
        raise DataContractError(f"features must be [H, W, D], got {list(first.shape)}")
    acc = maha.MahalanobisAccumulator(args.classes, first.shape[:2], first.shape[2])
    for e in entries:
        acc.update(load_tensor(e.features), load_tensor(e.labels))
    stats = acc.finalize()
    stats = maha.with_normalization(stats, (load_tensor(e.features) for e in entries))
    maha.save_stats(stats, args.stats_dir)
    for c, n in enumerate(stats.counts):
        print(f"class {c}: {int(n)} pixels")
    if stats.dropped:
        print(f"dropped classes (no pixels): {stats.dropped}")
    print(f"norm_mu={stats.norm_mu:.6g} norm_s={stats.norm_s:.6g} -> {args.stats_dir}")
    return EXIT_OK


# -- evaluate -----------------------------------------------------------------


def _entry_stats(scores_path, labels_path, num_classes):
    s = load_tensor(scores_path)
    t = load_tensor(labels_path)
    if s.ndim != 2 or s.dtype != np.float32:
        raise DataContractError(f"{scores_path}: score maps must be f32 [H, W]")
    if s.shape != t.shape:
        raise DataContractError(f"{scores_path}: score shape {s.shape} != label shape {t.shape}")
    sweep = sw.accumulate(sw.ThresholdSweep(), s, t)
    per_class = None
    if num_classes:
        per_class = ds.PerClassAccumulator(num_classes)
        per_class.update(s, t)
    return sweep, per_class


def _check_sidecar(scores_path: Path, notes: list[str]) -> str | None:
    sidecar = scores_path.with_suffix(".json")
    if not sidecar.exists():
        return None
    meta = json.loads(sidecar.read_text())
    if meta.get("output_sha256") and meta["output_sha256"] != sha256_file(scores_path):
        notes.append(f"stale score map: {scores_path} does not match its sidecar digest")
    return meta.get("method")


def cmd_evaluate(args) -> int:
    manifest = ds.MixManifest.load(args.manifest)
    entries = manifest.entries if args.split == "all" else manifest.select(args.split)
    entries = [e for e in entries if e.scores is not None]
    missing = ds.MixManifest(entries, root=manifest.root).check_paths()
    if missing:
        raise FileNotFoundError(f"missing files: {[str(p) for p in missing]}")
    notes: list[str] = []
    methods = {_check_sidecar(Path(e.scores), notes) for e in entries} - {None}
    method = args.method or (methods.pop() if len(methods) == 1 else None)

    jobs = [(str(e.scores), str(e.labels), args.classes) for e in entries]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            parts = list(pool.map(_entry_stats, *zip(*jobs)))
    else:
        parts = [_entry_stats(*j) for j in jobs]

    total = sw.ThresholdSweep()
    per_class = ds.PerClassAccumulator(args.classes) if args.classes else None
    for s, pc in parts:
        total = sw.merge(total, s)
        if per_class is not None:
            per_class = per_class.merge(pc)

    rep = sw.report(total)
    notes.extend(rep.warnings)
    out = Path(args.out)
    doc = {
        "method": method,
        "dataset": args.dataset,
        "images": len(entries),
        **rep.to_dict(),
        "warnings": notes,
        "sweep": total.to_dict(),
    }
    if per_class is not None:
        doc["per_class"] = {str(k): v for k, v in per_class.table().items()}
    write_json(out / "report.json", doc)
    write_text(out / "sweep.csv", sw.sweep_table_csv(total))
    for n in notes:
        log.warning(n)
    print(json.dumps(rep.metrics()))
    return EXIT_OK


# -- tune-odin ----------------------------------------------------------------


def cmd_tune_odin(args) -> int:
    manifest = ds.MixManifest.load(args.manifest)
    entries = manifest.entries if args.split == "all" else manifest.select(args.split)
    entries = [e for e in entries if e.logits is not None]
    if not entries:
        raise DataContractError("no entries with 'logits' in the selected split")

    def pairs():
        for e in entries:
            x = load_tensor(e.logits)
            if x.ndim != 3:
                raise DataContractError(f"{e.logits}: logits must be [H, W, K]")
            yield x, load_tensor(e.labels)

    try:
        best, aurocs = ds.tune_odin(pairs())
    except sw.UndefinedMetricError as e:
        raise DataContractError(str(e)) from e
    for t, a in aurocs.items():
        print(f"T={t:<5} AUROC={a:.6f}")
    print(f"best temperature: {best}")
    if args.out:
        write_json(args.out, {"temperature": best, "auroc": {str(t): a for t, a in aurocs.items()}})
    return EXIT_OK


# -- gen ----------------------------------------------------------------------


def cmd_gen(args) -> int:
    if args.kind == "perlin" and args.cell < 2:
        raise UsageError("--cell must be >= 2")
    out = Path(args.out)
    entries = []
    for i in range(args.count):
        seed = [args.seed, i]
        if args.kind == "gaussian":
            img, lab = noise.gen_gaussian_noise(args.height, args.width, args.channels, seed)
        else:
            img, lab = noise.gen_perlin_noise(args.height, args.width, args.cell, args.channels, seed)
        save_tensor(img, out / f"image_{i:04d}.tnsr")
        save_tensor(lab, out / f"label_{i:04d}.tnsr")
        entries.append(
            ds.ManifestEntry(image=out / f"image_{i:04d}.tnsr", labels=out / f"label_{i:04d}.tnsr", source="OOD-synthetic")
        )
    manifest = ds.MixManifest(entries, seed=args.seed, root=out)
    write_json(out / "manifest.json", manifest.to_dict())
    print(f"wrote {args.count} {args.kind} images to {out}")
    return EXIT_OK


# -- synth-model --------------------------------------------------------------


def cmd_synth_model(args) -> int:
    cfg = SynthConfig(
        height=args.height,
        width=args.width,
        num_classes=args.classes,
        delta=args.delta,
        count=args.count,
        feature_dim=args.feature_dim,
        feature_stride=args.feature_stride,
        ood_fraction=args.ood_fraction,
        seed=args.seed,
    )
    out = Path(args.out)
    entries = []
    for i, smp in enumerate(synth_model(cfg)):
        names = {k: out / f"{k}_{i:04d}.tnsr" for k in ("labels", "logits", "features")}
        save_tensor(smp.labels, names["labels"])
        save_tensor(smp.logits, names["logits"])
        save_tensor(smp.features, names["features"])
        entries.append(ds.ManifestEntry(source="OOD-synthetic", **names))
    write_json(out / "manifest.json", ds.MixManifest(entries, seed=args.seed, root=out).to_dict())
    print(f"wrote {cfg.count} synthetic samples (delta={cfg.delta}) to {out}")
    return EXIT_OK


# -- report -------------------------------------------------------------------

REPORT_COLUMNS = ("method", "dataset") + sw.METRIC_NAMES


def cmd_report(args) -> int:
    files: list[Path] = []
    for p in map(Path, args.inputs):
        if p.is_dir():
            files.extend(sorted(p.rglob("report.json")))
        elif p.is_file():
            files.append(p)
        else:
            log.warning("skipping missing report %s", p)
    rows, class_rows = [], []
    for f in files:
        try:
            doc = json.loads(f.read_text())
        except (OSError, json.JSONDecodeError) as e:
            log.warning("skipping unreadable report %s: %s", f, e)
            continue
        method = doc.get("method") or ""
        dataset = doc.get("dataset") or f.parent.name
        rows.append([method, dataset] + [doc.get(k) for k in sw.METRIC_NAMES])
        for cls, v in (doc.get("per_class") or {}).items():
            class_rows.append([method, dataset, cls, v])
    if not rows:
        log.warning("no reports found")

    def table(header, body):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in body:
            w.writerow(["" if v is None else v for v in r])
        return buf.getvalue()

    out = Path(args.out)
    write_text(out, table(REPORT_COLUMNS, rows))
    if class_rows:
        write_text(out.with_name(out.stem + "_per_class.csv"), table(("method", "dataset", "class", "mean_score"), class_rows))
    print(f"{len(rows)} report(s) -> {out}")
    return EXIT_OK


# -- remap --------------------------------------------------------------------


def cmd_remap(args) -> int:
    mapping = ds.LabelMapping.from_json(args.mapping)
    out = Path(args.out)
    for inp in map(Path, args.inputs):
        lab = load_tensor(inp)
        if lab.ndim != 2 or lab.dtype.kind != "u":
            raise DataContractError(f"{inp}: label maps must be unsigned [H, W]")
        save_tensor(ds.remap_labels(lab, mapping).astype(np.uint16), out / inp.name)
    print(f"remapped {len(args.inputs)} label map(s) -> {out}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pixood", description="Pixel-level OOD scoring and evaluation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("score", help="score logits / stacks / confidence / features")
    s.add_argument("inputs", nargs="+")
    s.add_argument("--method", required=True, choices=METHODS)
    s.add_argument("--temperature", type=float)
    s.add_argument("--radius", type=int, default=0, help="boundary suppression radius (pixels)")
    s.add_argument("--stats-dir")
    s.add_argument("--size", type=int, nargs=2, metavar=("H", "W"), help="mahalanobis output size")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_score)

    f = sub.add_parser("fit-mahalanobis", help="fit class means/covariances on feature maps")
    f.add_argument("--manifest", required=True)
    f.add_argument("--classes", type=int, required=True)
    f.add_argument("--stats-dir", required=True)
    f.set_defaults(func=cmd_fit_mahalanobis)

    e = sub.add_parser("evaluate", help="threshold-sweep metrics over a manifest")
    e.add_argument("--manifest", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--method")
    e.add_argument("--dataset")
    e.add_argument("--classes", type=int, help="also collect per-class mean scores")
    e.add_argument("--split", choices=("all", "tune", "eval"), default="all")
    e.add_argument("--jobs", type=int, default=1)
    e.set_defaults(func=cmd_evaluate)

    t = sub.add_parser("tune-odin", help="pick the ODIN temperature by AUROC")
    t.add_argument("--manifest", required=True)
    t.add_argument("--split", choices=("all", "tune", "eval"), default="tune")
    t.add_argument("--out")
    t.set_defaults(func=cmd_tune_odin)

    g = sub.add_parser("gen", help="generate Gaussian or Perlin noise images")
    g.add_argument("kind", choices=("gaussian", "perlin"))
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--height", type=int, default=1024)
    g.add_argument("--width", type=int, default=2048)
    g.add_argument("--channels", type=int, default=3)
    g.add_argument("--cell", type=int, default=64)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    m = sub.add_parser("synth-model", help="synthetic logits/features/labels with tunable separability")
    m.add_argument("--delta", type=float, required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--height", type=int, default=64)
    m.add_argument("--width", type=int, default=128)
    m.add_argument("--classes", type=int, default=19)
    m.add_argument("--count", type=int, default=4)
    m.add_argument("--feature-dim", type=int, default=8)
    m.add_argument("--feature-stride", type=int, default=1)
    m.add_argument("--ood-fraction", type=float, default=0.25)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_synth_model)

    r = sub.add_parser("report", help="merge evaluation reports into a comparison table")
    r.add_argument("inputs", nargs="*")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)

    rm = sub.add_parser("remap", help="remap source label maps to target ids / OOD / ignore")
    rm.add_argument("inputs", nargs="+")
    rm.add_argument("--mapping", required=True)
    rm.add_argument("--out", required=True)
    rm.set_defaults(func=cmd_remap)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "verbose", False):
            logging.getLogger().setLevel(logging.DEBUG)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataContractError, TensorFormatError, maha.StatsFormatError, np.linalg.LinAlgError, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
