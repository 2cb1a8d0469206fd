"""Convert .npy arrays (e.g. dumped network logits or label maps) to TNSR files."""
import argparse
from pathlib import Path

import numpy as np

from pixood.tensor import save_tensor

CASTS = {"float64": np.float32, "int64": np.uint16, "int32": np.uint16, "uint8": np.uint8}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("inputs", nargs="+")
    ap.add_argument("--out", required=True)
    ap.add_argument("--labels", action="store_true", help="cast integer arrays to u16 label maps")
    args = ap.parse_args(argv)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for p in map(Path, args.inputs):
        a = np.load(p)
        if args.labels:
            if a.min() < 0 or a.max() > np.iinfo(np.uint16).max:
                raise SystemExit(f"{p}: label ids outside the u16 range")
            a = a.astype(np.uint16)
        elif a.dtype.name in CASTS:
            a = a.astype(CASTS[a.dtype.name])
        save_tensor(a, out / (p.stem + ".tnsr"))
        print(f"{p} -> {out / (p.stem + '.tnsr')} {a.dtype} {a.shape}")


if __name__ == "__main__":
    main()
