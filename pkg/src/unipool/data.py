"""CIFAR-10 binary ingestion, synthetic stripe datasets, batching.

Images are kept as raw uint8 (N, 3, H, W) plus per-channel normalization
constants; normalized float batches are produced on demand so a full CIFAR-10
split never has to live in memory as floats.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .autodiff.tensor import Tensor, get_dtype

CIFAR10_CLASSES = (
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
)
TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILE = "test_batch.bin"
RECORDS_PER_FILE = 10_000


class DataError(Exception):
    """Missing, truncated or inconsistent dataset files."""


@dataclass
class Dataset:
    raw: np.ndarray
    labels: np.ndarray
    class_names: list[str]
    mean: np.ndarray = field(default=None)
    std: np.ndarray = field(default=None)

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=np.uint8)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.raw.ndim != 4:
            raise DataError(f"images must be (N, C, H, W), got shape {self.raw.shape}")
        if len(self.labels) != len(self.raw):
            raise DataError(f"{len(self.raw)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise DataError(f"labels outside [0, {len(self.class_names)})")
        if self.mean is None:
            self.mean, self.std = channel_stats(self.raw)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.raw.shape[1:])

    @property
    def images(self) -> np.ndarray:
        """All images, scaled to [0, 1] and channel-normalized (float64)."""
        return normalize(self.raw, self.mean, self.std)

    def with_stats(self, mean: np.ndarray, std: np.ndarray) -> "Dataset":
        return Dataset(self.raw, self.labels, self.class_names, np.asarray(mean), np.asarray(std))


def channel_stats(raw: np.ndarray, chunk: int = 5000) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and std of raw/255, accumulated in float64."""
    c = raw.shape[1]
    total = np.zeros(c)
    count = 0
    for start in range(0, len(raw), chunk):
        x = raw[start : start + chunk].astype(np.float64) / 255.0
        total += x.sum(axis=(0, 2, 3))
        count += x.shape[0] * x.shape[2] * x.shape[3]
    if count == 0:
        return np.zeros(c), np.ones(c)
    mean = total / count
    sq = np.zeros(c)
    for start in range(0, len(raw), chunk):
        x = raw[start : start + chunk].astype(np.float64) / 255.0 - mean[None, :, None, None]
        sq += (x * x).sum(axis=(0, 2, 3))
    var = sq / count
    std = np.sqrt(var)
    std[std == 0] = 1.0
    return mean, std


def normalize(raw: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    x = raw.astype(np.float64) / 255.0
    return (x - mean[None, :, None, None]) / std[None, :, None, None]


# ---------------------------------------------------------------- CIFAR binary

def record_length(image_size: int = 32, channels: int = 3) -> int:
    return 1 + channels * image_size * image_size


def read_cifar_batch(path, image_size: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """Parse one binary batch file into (uint8 images (N,3,H,W), labels)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing batch file {path}")
    buf = path.read_bytes()
    rec = record_length(image_size)
    if len(buf) == 0 or len(buf) % rec:
        raise DataError(f"{path}: {len(buf)} bytes is not a whole number of {rec}-byte records")
    arr = np.frombuffer(buf, dtype=np.uint8).reshape(-1, rec)
    labels = arr[:, 0].astype(np.int64)
    images = arr[:, 1:].reshape(-1, 3, image_size, image_size).copy()
    return images, labels


def cifar_batch_bytes(raw: np.ndarray, labels: np.ndarray) -> bytes:
    """Serialize images and labels back to the binary record layout."""
    raw = np.asarray(raw, dtype=np.uint8)
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
        raise DataError("labels must fit in one byte")
    recs = np.empty((len(raw), 1 + raw[0].size if len(raw) else 1), dtype=np.uint8)
    recs[:, 0] = labels
    recs[:, 1:] = raw.reshape(len(raw), -1)
    return recs.tobytes()


def write_cifar_batch(path, raw: np.ndarray, labels: np.ndarray) -> Path:
    path = Path(path)
    path.write_bytes(cifar_batch_bytes(raw, labels))
    return path


def _class_names(directory: Path, n_classes_hint: int) -> list[str]:
    meta = directory / "batches.meta.txt"
    if meta.is_file():
        names = [ln.strip() for ln in meta.read_text().splitlines() if ln.strip()]
        if names:
            return names
    if n_classes_hint <= len(CIFAR10_CLASSES):
        return list(CIFAR10_CLASSES[: max(n_classes_hint, 1)])
    return [f"class_{i}" for i in range(n_classes_hint)]


def load_cifar_dir(dir_path, image_size: int = 32, train_files=TRAIN_FILES,
                   test_file: str = TEST_FILE, expected: Optional[tuple[int, int]] = None,
                   ) -> tuple[Dataset, Dataset]:
    """Load any directory laid out like CIFAR-10 (synthetic exports included)."""
    directory = Path(dir_path)
    if not directory.is_dir():
        raise DataError(f"dataset directory {directory} does not exist")
    present = [f for f in train_files if (directory / f).is_file()]
    if not present:
        raise DataError(f"no training batches found in {directory}")
    parts = [read_cifar_batch(directory / f, image_size) for f in present]
    train_raw = np.concatenate([p[0] for p in parts])
    train_labels = np.concatenate([p[1] for p in parts])
    test_raw, test_labels = read_cifar_batch(directory / test_file, image_size)
    if expected is not None and (len(train_raw), len(test_raw)) != expected:
        raise DataError(f"expected {expected[0]}/{expected[1]} train/test records, "
                        f"found {len(train_raw)}/{len(test_raw)}")
    n_classes = int(max(train_labels.max(), test_labels.max())) + 1
    names = _class_names(directory, n_classes)
    train = Dataset(train_raw, train_labels, names)
    test = Dataset(test_raw, test_labels, names, train.mean, train.std)
    return train, test


def load_cifar10(dir_path) -> tuple[Dataset, Dataset]:
    """The standard 50,000/10,000 CIFAR-10 binary release.

    Normalization constants come from the training split and are applied
    to both splits.
    """
    directory = Path(dir_path)
    for name in TRAIN_FILES + (TEST_FILE,):
        f = directory / name
        if not f.is_file():
            raise DataError(f"missing CIFAR-10 file {f}")
        if f.stat().st_size != RECORDS_PER_FILE * record_length():
            raise DataError(f"{f}: expected {RECORDS_PER_FILE * record_length()} bytes, got {f.stat().st_size}")
    return load_cifar_dir(directory, expected=(5 * RECORDS_PER_FILE, RECORDS_PER_FILE))


def default_data_dir() -> Optional[str]:
    return os.environ.get("UNIPOOL_DATA_DIR")


# ------------------------------------------------------------------- synthetic

@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 4
    samples_per_class: int = 32
    image_size: int = 32
    noise_std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2 or self.samples_per_class < 1 or self.image_size < 2 or self.noise_std < 0:
            raise ValueError(f"invalid synthetic dataset spec {self}")


def class_pattern(k: int, num_classes: int, size: int) -> np.ndarray:
    """Noise-free Gabor-like stripe image for class k, values in [0, 1], shape (3, size, size).

    Classes differ in stripe orientation, frequency and envelope position;
    the three channels carry phase-shifted copies.
    """
    theta = np.pi * k / num_classes
    freq = 2.0 + (k % 3)  # cycles per image
    angle = 2 * np.pi * k / num_classes
    cy = size / 2 + 0.2 * size * np.sin(angle)
    cx = size / 2 + 0.2 * size * np.cos(angle)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    env = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * (0.3 * size) ** 2))
    proj = (xx * np.cos(theta) + yy * np.sin(theta)) / size
    chans = [0.5 + 0.4 * env * np.cos(2 * np.pi * freq * proj + ph) for ph in (0.0, 2 * np.pi / 3, 4 * np.pi / 3)]
    return np.stack(chans)


def synthetic(spec: SyntheticSpec, stats: Optional[tuple[np.ndarray, np.ndarray]] = None) -> Dataset:
    """Class-balanced stripe dataset quantized to uint8.

    The class patterns depend only on the class index; ``spec.seed`` drives
    the Gaussian pixel noise and nothing else.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.num_classes * spec.samples_per_class
    s = spec.image_size
    labels = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)
    patterns = np.stack([class_pattern(k, spec.num_classes, s) for k in range(spec.num_classes)])
    images = patterns[labels]
    if spec.noise_std > 0:
        images = images + rng.normal(0.0, spec.noise_std, size=(n, 3, s, s))
    raw = np.rint(np.clip(images, 0.0, 1.0) * 255.0).astype(np.uint8)
    names = [f"stripes_{k}" for k in range(spec.num_classes)]
    if stats is None:
        return Dataset(raw, labels, names)
    return Dataset(raw, labels, names, *stats)


def synthetic_splits(spec: SyntheticSpec, test_per_class: Optional[int] = None) -> tuple[Dataset, Dataset]:
    """Train and test sets from independent noise streams; test uses train statistics."""
    train_seed, test_seed = np.random.SeedSequence(spec.seed).generate_state(2)
    train = synthetic(SyntheticSpec(spec.num_classes, spec.samples_per_class, spec.image_size,
                                    spec.noise_std, int(train_seed)))
    test_spec = SyntheticSpec(spec.num_classes, test_per_class or spec.samples_per_class,
                              spec.image_size, spec.noise_std, int(test_seed))
    return train, synthetic(test_spec, (train.mean, train.std))


def export_cifar_layout(train: Dataset, test: Dataset, out_dir, n_train_files: int = 1) -> list[Path]:
    """Write a dataset pair as data_batch_*.bin / test_batch.bin plus class names."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, idx in enumerate(np.array_split(np.arange(len(train)), n_train_files), start=1):
        paths.append(write_cifar_batch(out / f"data_batch_{i}.bin", train.raw[idx], train.labels[idx]))
    paths.append(write_cifar_batch(out / TEST_FILE, test.raw, test.labels))
    meta = out / "batches.meta.txt"
    meta.write_text("\n".join(train.class_names) + "\n")
    paths.append(meta)
    return paths


# -------------------------------------------------------------------- batching

def subset(ds: Dataset, n_per_class: int, seed: int = 0) -> Dataset:
    """Stratified sample of ``n_per_class`` images from every class (statistics kept)."""
    rng = np.random.default_rng(seed)
    picks = []
    for k in range(ds.num_classes):
        idx = np.flatnonzero(ds.labels == k)
        if len(idx) < n_per_class:
            raise DataError(f"class {k} has {len(idx)} samples, fewer than {n_per_class}")
        picks.append(np.sort(rng.choice(idx, n_per_class, replace=False)))
    sel = np.concatenate(picks)
    return Dataset(ds.raw[sel], ds.labels[sel], ds.class_names, ds.mean, ds.std)


def _augment(raw: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # Random crop with 4-pixel zero padding plus horizontal flip (optional, off by default).
    n, c, h, w = raw.shape
    padded = np.pad(raw, ((0, 0), (0, 0), (4, 4), (4, 4)))
    out = np.empty_like(raw)
    offs = rng.integers(0, 9, size=(n, 2))
    flips = rng.random(n) < 0.5
    for i in range(n):
        crop = padded[i, :, offs[i, 0] : offs[i, 0] + h, offs[i, 1] : offs[i, 1] + w]
        out[i] = crop[:, :, ::-1] if flips[i] else crop
    return out


def batches(ds: Dataset, batch_size: int, shuffle_seed=None, augment: bool = False,
            ) -> Iterator[tuple[Tensor, np.ndarray]]:
    """Yield (images, labels) covering every sample exactly once.

    ``shuffle_seed`` may be an int, a ``numpy.random.Generator`` (consumed in
    place, which is how training keeps resumable RNG state) or None for file
    order.  The last batch may be short.
    """
    n = len(ds)
    if batch_size < 1 or batch_size > n:
        raise DataError(f"batch_size {batch_size} must lie in [1, {n}]")
    if shuffle_seed is None:
        order = np.arange(n)
        rng = np.random.default_rng(0)
    else:
        rng = shuffle_seed if isinstance(shuffle_seed, np.random.Generator) else np.random.default_rng(shuffle_seed)
        order = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        raw = ds.raw[idx]
        if augment:
            raw = _augment(raw, rng)
        x = normalize(raw, ds.mean, ds.std).astype(get_dtype(), copy=False)
        yield Tensor(x), ds.labels[idx]
