"""Central finite differences, used as the independent gradient oracle."""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .tensor import Tensor


def finite_diff_grad(
    f: Callable[[], float],
    param: Tensor,
    h: float = 1e-5,
    indices: Optional[np.ndarray] = None,
    stencil: int = 3,
) -> np.ndarray:
    """Estimate d f / d param elementwise as (f(p+h) - f(p-h)) / 2h.

    ``stencil=5`` uses the fourth-order rule
    (f(p-2h) - 8 f(p-h) + 8 f(p+h) - f(p+2h)) / 12h instead, which tolerates a
    larger ``h`` and so loses less to round-off on curved objectives.

    ``f`` re-evaluates the objective from the current contents of
    ``param.data``; each element is perturbed in place and restored.  When
    ``indices`` (flat positions) is given only those entries are estimated and
    the rest of the returned array is zero.
    """
    if stencil not in (3, 5):
        raise ValueError(f"stencil must be 3 or 5, got {stencil}")
    flat = param.data.reshape(-1)
    grad = np.zeros(flat.shape, dtype=np.float64)
    positions = range(flat.size) if indices is None else indices
    for i in positions:
        original = flat[i]
        values = {}
        for k in ((-1, 1) if stencil == 3 else (-2, -1, 1, 2)):
            flat[i] = original + k * h
            values[k] = float(f())
        flat[i] = original
        if stencil == 3:
            grad[i] = (values[1] - values[-1]) / (2.0 * h)
        else:
            grad[i] = (values[-2] - 8.0 * values[-1] + 8.0 * values[1] - values[2]) / (12.0 * h)
    return grad.reshape(param.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor), elementwise."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom
