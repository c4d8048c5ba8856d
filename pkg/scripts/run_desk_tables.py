"""Reproduce the comparison tables at desk scale and print them.

Runs the builtin ``all-desk`` suite (or the layouts given with --layouts)
for the requested seeds. Results are memoized under <root>/cache, so the
script can be interrupted and rerun.

    python scripts/run_desk_tables.py --seeds 0 1 2 --root runs/desk
"""

import argparse
import logging
import sys

from sdbox.experiments.report import LAYOUTS
from sdbox.experiments.suite import run_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--layouts", nargs="+", default=sorted(LAYOUTS), choices=sorted(LAYOUTS))
    ap.add_argument("--root", default="runs/desk")
    ap.add_argument("--epochs", type=int, help="override teacher/SDB epochs (smoke runs)")
    ap.add_argument("--student-epochs", type=int)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    training = {}
    if args.epochs is not None:
        training["epochs"] = args.epochs
    if args.student_epochs is not None:
        training["student_epochs"] = args.student_epochs
    suite = {"name": "desk", "layouts": args.layouts, "seeds": args.seeds, "training": training}
    result = run_suite(suite, args.root)
    for layout, paths in result.reports.items():
        print(paths["text"].read_text())
    for node, err in result.failures.items():
        print(f"FAILED {node}: {err}", file=sys.stderr)
    return 0 if result.ok else 1


if __name__ == "__main__":
    sys.exit(main())
