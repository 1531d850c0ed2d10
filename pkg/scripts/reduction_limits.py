"""Show universal pooling collapsing onto average, max and stride pooling.

Builds a per-block one-layer scoring network and sets its parameters to the
three limiting configurations, printing how far the output is from the
matching standard pooling on random feature maps.

    python scripts/reduction_limits.py --inputs 100
"""

import argparse

import numpy as np

from unipool.autodiff import Tensor, no_grad
from unipool.pooling import B1Spec, UniversalPoolState, avg_pool, max_pool, stride_pool, universal_pool


def pooled(state, f):
    with no_grad():
        out, _ = universal_pool(Tensor(f), state)
    return out.data


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--inputs", type=int, default=100)
    ap.add_argument("--channels", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    f = rng.normal(size=(args.inputs, args.channels, 8, 8))
    state = UniversalPoolState.create(B1Spec("local_fc"), args.channels, 2, (8, 8), rng)

    state.zero_()
    err = np.abs(pooled(state, f) - avg_pool(Tensor(f), 2).data).max()
    print(f"zero parameters        max |universal - avg|    = {err:.3e}")

    for alpha in (1.0, 10.0, 100.0, 1000.0):
        state.zero_()
        state.params["fc1.weight"].data[...] = alpha * np.eye(4)
        err = np.abs(pooled(state, f) - max_pool(Tensor(f), 2).data).mean()
        print(f"identity x {alpha:<7g}     mean |universal - max|   = {err:.3e}")

    for bias in (5.0, 10.0, 15.0, 20.0):
        state.zero_()
        state.params["fc1.bias"].data[:, 0] = bias
        err = np.abs(pooled(state, f) - stride_pool(Tensor(f), 2).data).max()
        leak = 3 * np.exp(-bias) / (1 + 3 * np.exp(-bias))
        print(f"top-left bias {bias:<5g}     max |universal - stride| = {err:.3e}  (weight leak {leak:.2e})")


if __name__ == "__main__":
    main()
