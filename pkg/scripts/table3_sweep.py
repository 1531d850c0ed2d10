"""Run the eleven-row pooling grid (V1-V6 baselines, P1-P5 universal) and print a summary.

    python scripts/table3_sweep.py --repeat 3 --epochs 30 --out runs/table3

At ``--scale tiny`` (default) this trains the tiny backbones on synthetic
stripes.  ``--scale paper`` selects the full CIFAR-10 protocol, which is
far beyond a CPU budget.
"""

import argparse
import csv
import sys
from pathlib import Path

from unipool.cli import main as cli


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--scale", choices=("tiny", "paper"), default="tiny")
    ap.add_argument("--arch", default="resnet", help="vgg or resnet (tiny variants at --scale tiny)")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="runs/table3")
    args, extra = ap.parse_known_args()

    rc = cli(["sweep", "--grid", "table3", "--scale", args.scale, "--arch", args.arch, "--repeat",
              str(args.repeat), "--epochs", str(args.epochs), "--workers", str(args.workers), "--out", args.out]
             + extra)
    if rc:
        return rc
    with (Path(args.out) / "table3_summary.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    print(f"\n{'method':<6} {'local':<14} {'global':<14} {'test top-1':>16}")
    for r in rows:
        mean, std = 100 * float(r["test_top1_mean"]), 100 * float(r["test_top1_std"])
        print(f"{r['method']:<6} {r['local_pool']:<14} {r['global_pool']:<14} {mean:9.2f} +- {std:4.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
