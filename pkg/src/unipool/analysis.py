"""Inspect learned pooling weights.

Trained universal-pooling channels fall into three behaviours:

* **Average**: pi stays close to 1/S^2 everywhere, for every input.
* **Flexible**: pi is far from uniform and moves with the input.
* **Fixed**: pi is far from uniform but hardly reacts to the input.

For one channel with weight maps pi_1..pi_N (one per input image)::

    uniformity  = mean_n  max_pixel |pi_n - 1/S^2|
    sensitivity = mean_{n<m} sum_pixel |pi_n - pi_m| / n_blocks

A one-hot map that moves its hot pixel in a fraction q of the blocks has
sensitivity 2q, so ``sensitivity`` reads as "twice the fraction of blocks
whose selected position changes".  A channel is Average iff
uniformity < eps_u, otherwise Flexible iff sensitivity >= eps_s, otherwise
Fixed.  The default thresholds are eps_u = 0.05 (1 - 1/S^2) and eps_s = 0.1.
They are a convention of this package and can be overridden.
"""

from __future__ import annotations

import csv
import itertools
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .autodiff import Tensor, no_grad
from .models import Model, PoolSite
from .pooling.functional import blocks_of, unblock

CATEGORIES = ("Average", "Flexible", "Fixed")
CSV_HEADER = ["site", "channel", "input", "row", "col", "pi", "feature"]
SUMMARY_HEADER = ["site", "channel", "category", "uniformity", "sensitivity"]
MIN_SENSITIVITY_INPUTS = 32


class AnalysisError(ValueError):
    pass


@dataclass
class SiteWeights:
    """Pooling weights of one universal site for a batch of inputs.

    ``pi`` covers the block-tiled region (N, C, Hb*S, Wb*S); ``features`` is
    the pooling layer's input, cropped to the same region.
    """

    site: int
    name: str
    size: int
    pi: np.ndarray
    features: np.ndarray


@dataclass(frozen=True)
class Thresholds:
    eps_u: Optional[float] = None
    eps_s: float = 0.1

    def uniformity_threshold(self, size: int) -> float:
        if self.eps_u is not None:
            return self.eps_u
        return 0.05 * (1.0 - 1.0 / (size * size))


@dataclass(frozen=True)
class ChannelPoolingProfile:
    site: int
    channel: int
    category: str
    uniformity: float
    sensitivity: float
    n_inputs: int

    def row(self) -> list:
        return [self.site, self.channel, self.category, f"{self.uniformity:.17g}", f"{self.sensitivity:.17g}"]


def check_block_sums(pi: np.ndarray, size: int, tol: float = 1e-6) -> None:
    sums = blocks_of(pi, size).sum(axis=-1)
    err = float(np.abs(sums - 1.0).max())
    if err > tol:
        raise AnalysisError(f"pooling weights do not sum to one per block (max deviation {err:.3g})")


def extract_weights(model: Model, batch: Tensor | np.ndarray) -> list[SiteWeights]:
    """Run ``batch`` through ``model`` in evaluation mode and collect pi and
    the incoming feature map at every universal pooling site."""
    if not any(p.spec.variant == "universal" for p in model.pool_layers()):
        raise AnalysisError("model has no universal pooling site to analyze")
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    out: list[SiteWeights] = []
    site = 0
    with no_grad():
        for name, layer in model.layers:
            if isinstance(layer, PoolSite):
                y, pi = layer(x, training=False)
                if pi is not None:
                    s = layer.pool.spec.size
                    h, w = pi.shape[2:]
                    check_block_sums(pi.data, s)
                    out.append(SiteWeights(site, name, s, pi.data.copy(), x.data[:, :, :h, :w].copy()))
                site += 1
                x = y
            else:
                x = layer(x, training=False)
    return out


def uniformity(maps: np.ndarray, size: int) -> float:
    """Mean over inputs of the largest deviation from 1/S^2; ``maps`` is (N, H, W)."""
    dev = np.abs(maps - 1.0 / (size * size)).reshape(maps.shape[0], -1).max(axis=1)
    return float(dev.mean())


def sensitivity(maps: np.ndarray, size: int) -> float:
    """Mean over unordered input pairs of the L1 distance between maps,
    divided by the number of blocks."""
    n = maps.shape[0]
    if n < 2:
        raise AnalysisError(f"sensitivity needs at least 2 inputs, got {n}")
    n_blocks = (maps.shape[1] // size) * (maps.shape[2] // size)
    flat = maps.reshape(n, -1)
    total = 0.0
    for i in range(n - 1):
        total += float(np.abs(flat[i + 1 :] - flat[i]).sum())
    return total / (n * (n - 1) / 2) / n_blocks


def classify(u: float, s: float, eps_u: float, eps_s: float) -> str:
    if u < eps_u:
        return "Average"
    return "Flexible" if s >= eps_s else "Fixed"


def categorize(pi: np.ndarray, size: int, site: int = 0,
               thresholds: Thresholds = Thresholds()) -> list[ChannelPoolingProfile]:
    """Profile every channel of ``pi`` (N, C, H, W) collected over N inputs."""
    pi = np.asarray(pi, dtype=np.float64)
    if pi.ndim != 4:
        raise AnalysisError(f"expected pooling weights of shape (N, C, H, W), got {pi.shape}")
    n = pi.shape[0]
    if n < 2:
        raise AnalysisError(f"categorization needs at least 2 inputs, got {n}")
    eps_u = thresholds.uniformity_threshold(size)
    profiles = []
    for c in range(pi.shape[1]):
        maps = pi[:, c]
        u, s = uniformity(maps, size), sensitivity(maps, size)
        profiles.append(ChannelPoolingProfile(site, c, classify(u, s, eps_u, thresholds.eps_s), u, s, n))
    return profiles


def categorize_sites(sites: Sequence[SiteWeights],
                     thresholds: Thresholds = Thresholds()) -> list[ChannelPoolingProfile]:
    out = []
    for sw in sites:
        out.extend(categorize(sw.pi, sw.size, sw.site, thresholds))
    return out


def summary_counts(profiles: Iterable[ChannelPoolingProfile]) -> dict[int, dict[str, int]]:
    counts: dict[int, Counter] = {}
    for p in profiles:
        counts.setdefault(p.site, Counter())[p.category] += 1
    return {site: {k: c.get(k, 0) for k in CATEGORIES} for site, c in sorted(counts.items())}


def format_summary(profiles: Sequence[ChannelPoolingProfile]) -> str:
    """Fixed-width per-site category counts."""
    lines = [f"{'site':>6} {'Average':>9} {'Flexible':>9} {'Fixed':>9} {'total':>7}"]
    grand = Counter()
    for site, counts in summary_counts(profiles).items():
        total = sum(counts.values())
        grand.update(counts)
        lines.append(f"{site:>6} {counts['Average']:>9} {counts['Flexible']:>9} {counts['Fixed']:>9} {total:>7}")
    lines.append(f"{'all':>6} {grand['Average']:>9} {grand['Flexible']:>9} {grand['Fixed']:>9} "
                 f"{sum(grand.values()):>7}")
    return "\n".join(lines)


def write_summary_csv(profiles: Sequence[ChannelPoolingProfile], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_HEADER)
        for p in profiles:
            w.writerow(p.row())
    return path


# ---------------------------------------------------------------------------
# Constructed weight maps with known behaviour


def uniform_weights(n: int, c: int, h: int, w: int, size: int) -> np.ndarray:
    return np.full((n, c, h, w), 1.0 / (size * size))


def tracking_one_hot(features: np.ndarray, size: int) -> np.ndarray:
    """One-hot pi selecting each block's argmax of ``features``; it follows the input."""
    fb = blocks_of(np.asarray(features, dtype=np.float64), size)
    onehot = np.zeros_like(fb)
    np.put_along_axis(onehot, fb.argmax(axis=-1)[..., None], 1.0, axis=-1)
    hb, wb = fb.shape[2:4]
    return unblock(onehot, size, hb * size, wb * size)


def fixed_one_hot(n: int, c: int, h: int, w: int, size: int, position: tuple[int, int] = (0, 0)) -> np.ndarray:
    """The same one-hot pi (``position`` inside every block) for all inputs."""
    pi = np.zeros((n, c, h, w))
    r, col = position
    pi[:, :, r::size, col::size] = 1.0
    return pi


# ---------------------------------------------------------------------------
# Export


def export_csv(sites: Sequence[SiteWeights], path) -> Path:
    """One row per pixel; values written with 17 significant digits so the
    text round-trips to the same float64."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for sw in sites:
            n, c, h, wd = sw.pi.shape
            for i, ch, r, col in itertools.product(range(n), range(c), range(h), range(wd)):
                w.writerow([sw.site, ch, i, r, col, f"{sw.pi[i, ch, r, col]:.17g}",
                            f"{sw.features[i, ch, r, col]:.17g}"])
    return path


def read_csv(path) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Inverse of :func:`export_csv`: site -> (pi, features) arrays."""
    rows: dict[int, list[tuple[int, int, int, int, float, float]]] = {}
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise AnalysisError(f"unexpected weight CSV header {header}")
        for rec in reader:
            site, ch, i, r, col = (int(v) for v in rec[:5])
            rows.setdefault(site, []).append((i, ch, r, col, float(rec[5]), float(rec[6])))
    out = {}
    for site, recs in rows.items():
        idx = np.array([rec[:4] for rec in recs])
        shape = tuple(idx.max(axis=0) + 1)
        pi, feat = np.zeros(shape), np.zeros(shape)
        pi[tuple(idx.T)] = [rec[4] for rec in recs]
        feat[tuple(idx.T)] = [rec[5] for rec in recs]
        out[site] = (pi, feat)
    return out


def to_gray(arr: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Min-max scale a 2-D map to 0..255; a constant map becomes all zeros."""
    lo, hi = float(arr.min()), float(arr.max())
    if hi == lo:
        return np.zeros(arr.shape, dtype=np.uint8), lo, hi
    return np.rint((arr - lo) / (hi - lo) * 255.0).astype(np.uint8), lo, hi


def write_pgm(arr: np.ndarray, path) -> Path:
    """Binary P5 8-bit image plus ``<path>.scale.txt`` holding the min and max
    needed to map gray levels back to values."""
    path = Path(path)
    gray, lo, hi = to_gray(np.asarray(arr, dtype=np.float64))
    h, w = gray.shape
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + gray.tobytes())
    Path(str(path) + ".scale.txt").write_text(f"min {lo:.17g}\nmax {hi:.17g}\n")
    return path


def read_pgm(path) -> np.ndarray:
    """Read a P5 image written by :func:`write_pgm` back to values using its sidecar scale."""
    path = Path(path)
    data = path.read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5" or len(parts) < 5:
        raise AnalysisError(f"{path} is not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    gray = np.frombuffer(data[-w * h :], dtype=np.uint8).reshape(h, w).astype(np.float64)
    scale = dict(line.split() for line in Path(str(path) + ".scale.txt").read_text().splitlines())
    lo, hi = float(scale["min"]), float(scale["max"])
    return lo + gray / maxval * (hi - lo)


def export_pgm(sites: Sequence[SiteWeights], out_dir, max_inputs: Optional[int] = None,
               channels: Optional[Sequence[int]] = None) -> list[Path]:
    """One pi image and one feature image per (site, channel, input)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for sw in sites:
        n = sw.pi.shape[0] if max_inputs is None else min(max_inputs, sw.pi.shape[0])
        chans = range(sw.pi.shape[1]) if channels is None else channels
        for ch in chans:
            for i in range(n):
                stem = f"site{sw.site}_ch{ch}_in{i}"
                paths.append(write_pgm(sw.pi[i, ch], out_dir / f"{stem}_pi.pgm"))
                paths.append(write_pgm(sw.features[i, ch], out_dir / f"{stem}_feature.pgm"))
    return paths


def export(sites: Sequence[SiteWeights], fmt: str, out_dir, **kwargs) -> list[Path]:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise AnalysisError(f"cannot create export directory {out_dir}: {exc}") from None
    if fmt == "csv":
        return [export_csv(sites, out_dir / "weights.csv")]
    if fmt == "pgm":
        return export_pgm(sites, out_dir, **kwargs)
    raise AnalysisError(f"unknown export format {fmt!r} (expected csv or pgm)")
