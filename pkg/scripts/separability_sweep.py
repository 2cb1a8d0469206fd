"""Score synthetic model outputs with every logit-based method across a range
of separabilities and write one CSV row per (delta, method)."""
import argparse
import csv
import sys

from pixood import scoring as sc
from pixood import sweep as sw
from pixood.synth import SynthConfig, synth_model

METHODS = {
    "max_softmax": sc.score_max_softmax,
    "odin_T10": lambda x: sc.score_odin(x, 10.0),
    "entropy": sc.score_entropy,
}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--deltas", type=float, nargs="+", default=[0, 0.5, 1, 2, 3, 4, 6])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--count", type=int, default=4)
    ap.add_argument("--out", default="-", help="CSV path, '-' for stdout")
    args = ap.parse_args(argv)

    fh = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    writer = csv.writer(fh)
    writer.writerow(["delta", "method", *sw.METRIC_NAMES, "youden_threshold", "maxiou_threshold"])
    for delta in args.deltas:
        samples = synth_model(SynthConfig(delta=delta, seed=args.seed, count=args.count))
        for name, fn in METHODS.items():
            s = sw.sweep_of((fn(smp.logits), smp.labels) for smp in samples)
            m = sw.report(s).metrics()
            writer.writerow(
                [delta, name, *(f"{m[k]:.6f}" for k in sw.METRIC_NAMES), f"{sw.youden_threshold(s):.6f}", f"{sw.max_iou(s)[1]:.6f}"]
            )
    if fh is not sys.stdout:
        fh.close()


if __name__ == "__main__":
    main()
