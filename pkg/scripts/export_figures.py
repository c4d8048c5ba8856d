"""Write the plot-series files: soft labels per stream and SDB loss curves.

Soft labels (T=4) are exported for the first --n test samples from three
sources: the normal teacher, the SDB clean stream and the SDB proxy
stream. Loss curves come from the SDB training step log.

    python scripts/export_figures.py --seed 0 --out runs/figures
"""

import argparse
from pathlib import Path

from sdbox.experiments.pipeline import DeskPipeline
from sdbox.experiments.report import soft_label_rows, write_loss_curve, write_soft_labels
from sdbox.training import soft_labels


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n", type=int, default=10, help="test samples in the soft-label export")
    ap.add_argument("--cache", default="runs/cache")
    ap.add_argument("--out", default="runs/figures")
    args = ap.parse_args()

    pipe = DeskPipeline(args.seed, cache_dir=args.cache)
    normal, sdb = pipe.teacher(), pipe.wrapped("sdb")
    rows = soft_label_rows(
        soft_labels(normal, pipe.test, None, 4.0, args.n),
        soft_labels(sdb, pipe.test, None, 4.0, args.n),
        soft_labels(sdb, pipe.test, pipe.key, 4.0, args.n),
    )
    out = Path(args.out)
    print(write_soft_labels(rows, out / f"soft_labels_seed{args.seed}.csv"))
    for variant in ("sdb", "wo_kdis"):
        pipe.wrapped(variant)
        print(write_loss_curve(pipe.read_log(variant), out / f"loss_{variant}_seed{args.seed}.csv"))


if __name__ == "__main__":
    main()
