"""Train a small universal-pooling network and categorize its pooling channels.

    python scripts/taxonomy_demo.py --epochs 10 --out runs/taxonomy

Writes the run into ``--out`` and the analysis into ``--out/analysis``.
"""

import argparse
import sys

from unipool.cli import main as cli


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--out", default="runs/taxonomy")
    ap.add_argument("--image-size", type=int, default=32)
    ap.add_argument("--inputs", type=int, default=32)
    args = ap.parse_args()

    common = ["--out", args.out, "--data.image_size", str(args.image_size)]
    rc = cli(["train", "--quiet", "--epochs", str(args.epochs), "--pool.local", "universal:fc1",
              "--pool.global", "universal:fc2", "--batch-size", "32"] + common)
    if rc:
        return rc
    return cli(["analyze", "--ckpt", f"{args.out}/ckpt_{args.epochs}.upl", "--inputs", str(args.inputs),
                "--format", "both"])


if __name__ == "__main__":
    sys.exit(main())
