"""Sweep the disturbance weight (omega) and augmentation weight (eta).

For each pair, trains an SDB teacher from a shared pretrained teacher and
reports teacher accuracy (clean / with key) and the unauthorized and
authorized student accuracies against the scratch baseline. This is the
sweep used to pick the library defaults.

    python scripts/sweep_weights.py --omega 0.005 0.01 --eta 0 3e-4
"""

import argparse
import itertools
import json
from dataclasses import replace

from sdbox.experiments.pipeline import DeskPipeline
from sdbox.training import TrainingConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--omega", type=float, nargs="+", default=[0.005, 0.01, 0.02])
    ap.add_argument("--eta", type=float, nargs="+", default=[0.0, 3e-4, 1e-3])
    ap.add_argument("--cache", default="runs/sweep")
    args = ap.parse_args()

    base = TrainingConfig()
    for omega, eta in itertools.product(args.omega, args.eta):
        cfg = replace(base, sdb=replace(base.sdb, omega=omega, eta=eta))
        pipe = DeskPipeline(args.seed, cfg, cache_dir=args.cache)
        row = {
            "omega": omega,
            "eta": eta,
            **pipe.teacher_acc("sdb"),
            "scratch": pipe.student_acc(None),
            "unauthorized": pipe.student_acc("sdb", "none"),
            "authorized": pipe.student_acc("sdb", "true"),
        }
        print(json.dumps(row), flush=True)


if __name__ == "__main__":
    main()
