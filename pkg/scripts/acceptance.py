"""Run the acceptance gate and show the per-criterion verdicts.

    python scripts/acceptance.py            # all ten criteria (about 7 minutes on one core)
    python scripts/acceptance.py --fast     # skip the 30-epoch training criterion

Set UNIPOOL_DATA_DIR to a cifar-10-batches-bin directory to include the
real CIFAR-10 ingestion check.
"""

import argparse
import sys
from pathlib import Path

import pytest


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--fast", action="store_true", help="deselect the desk-scale training run")
    args = ap.parse_args()
    tests = Path(__file__).resolve().parent.parent / "tests" / "test_acceptance.py"
    argv = [str(tests), "-v", "-s"]
    if args.fast:
        argv += ["-k", "not desk_scale"]
    return pytest.main(argv)


if __name__ == "__main__":
    sys.exit(main())
