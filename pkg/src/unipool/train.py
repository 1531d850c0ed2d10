"""SGD training loop, evaluation, checkpoint I/O and model-level gradient checks."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import checkpoint as ckpt
from .autodiff import Tape, Tensor, backward, cross_entropy, get_precision, no_grad, sgd_step
from .autodiff.gradcheck import relative_error
from .autodiff.tensor import branch_log
from .data import Dataset, batches
from .models import Model, ModelConfig, build_model

log = logging.getLogger(__name__)

METRICS_HEADER = ("epoch", "train_loss", "train_top1", "test_top1", "test_top5", "wall_time_s")


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or blew up."""


@dataclass
class TrainConfig:
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 30
    lr_decay_interval: int = 10
    batch_size: int = 64
    seed: int = 0
    precision: int = 32
    augment: bool = False

    def __post_init__(self):
        if self.lr0 < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("lr0, momentum and weight_decay must be non-negative")
        if self.epochs < 1 or self.batch_size < 1 or self.lr_decay_interval < 1:
            raise ValueError("epochs, batch_size and lr_decay_interval must be positive")
        if self.lr_decay_interval > self.epochs:
            raise ValueError(f"lr_decay_interval ({self.lr_decay_interval}) exceeds epochs ({self.epochs})")
        if self.precision not in (32, 64):
            raise ValueError("precision must be 32 or 64")


def learning_rate(epoch: int, lr0: float, interval: int) -> float:
    """Step schedule: lr0 * 0.1 ** floor(epoch / interval)."""
    return lr0 * 0.1 ** (epoch // interval)


@dataclass
class Metrics:
    epoch: int
    train_loss: float
    train_top1: float
    test_top1: float
    test_top5: float
    wall_time: float

    def row(self) -> list:
        return [self.epoch, repr(self.train_loss), repr(self.train_top1), repr(self.test_top1),
                repr(self.test_top5), f"{self.wall_time:.3f}"]


@dataclass
class EvalResult:
    loss: float
    top1: float
    top5: float
    n: int


@dataclass
class TrainState:
    """Everything besides the model needed to resume a run bit for bit."""

    epoch: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    initial_loss: Optional[float] = None
    blowup_streak: int = 0
    loss_trace: list[float] = field(default_factory=list)

    @classmethod
    def fresh(cls, seed: int) -> "TrainState":
        return cls(rng=np.random.default_rng(seed))


def topk_hits(logits: np.ndarray, labels: np.ndarray, k: int) -> int:
    k = min(k, logits.shape[1])
    # stable ordering so ties resolve to the lower class index
    top = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    return int((top == labels[:, None]).any(axis=1).sum())


def evaluate(model: Model, ds: Dataset, batch_size: int = 256) -> EvalResult:
    """Inference-mode loss and top-1/top-5 accuracy; leaves the model untouched."""
    total_loss = 0.0
    hits1 = hits5 = 0
    with no_grad():
        for x, y in batches(ds, min(batch_size, len(ds))):
            logits, _ = model(x, training=False)
            total_loss += cross_entropy(logits, y).item() * len(y)
            hits1 += topk_hits(logits.data, y, 1)
            hits5 += topk_hits(logits.data, y, 5)
    n = len(ds)
    return EvalResult(total_loss / n, hits1 / n, hits5 / n, n)


def train_step(model: Model, x: Tensor, y: np.ndarray, lr: float, cfg: TrainConfig) -> tuple[float, int]:
    with Tape() as tape:
        logits, _ = model(x, training=True)
        loss = cross_entropy(logits, y)
    backward(loss, tape)
    sgd_step(model.parameters(), lr, cfg.momentum, cfg.weight_decay)
    return loss.item(), topk_hits(logits.data, y, 1)


def train(
    model: Model,
    train_ds: Dataset,
    test_ds: Dataset,
    cfg: TrainConfig,
    state: Optional[TrainState] = None,
    out_dir=None,
    checkpoint_every: int = 0,
    stop_after: Optional[int] = None,
    on_epoch: Optional[Callable[[Metrics], None]] = None,
) -> list[Metrics]:
    """Run epochs ``state.epoch .. cfg.epochs - 1`` and return their metrics.

    With ``out_dir`` set, metrics are appended to ``metrics.csv`` and
    ``ckpt_<epoch>.upl`` is written every ``checkpoint_every`` epochs and
    after the final one.  ``stop_after`` ends the run early after that many
    epochs (used to test resumption).
    """
    state = state or TrainState.fresh(cfg.seed)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics_path = out / "metrics.csv"
        if state.epoch == 0 or not metrics_path.exists():
            with metrics_path.open("w", newline="") as fh:
                csv.writer(fh).writerow(METRICS_HEADER)
    history = []
    last = cfg.epochs if stop_after is None else min(cfg.epochs, state.epoch + stop_after)
    while state.epoch < last:
        epoch = state.epoch
        lr = learning_rate(epoch, cfg.lr0, cfg.lr_decay_interval)
        t0 = time.perf_counter()
        loss_sum, hits, seen = 0.0, 0, 0
        for step, (x, y) in enumerate(batches(train_ds, min(cfg.batch_size, len(train_ds)), state.rng, cfg.augment)):
            try:
                loss, h = train_step(model, x, y, lr, cfg)
            except FloatingPointError as exc:
                raise DivergenceError(f"epoch {epoch} step {step}: {exc}") from exc
            state.loss_trace.append(loss)
            loss_sum += loss * len(y)
            hits += h
            seen += len(y)
        train_loss = loss_sum / seen
        if not np.isfinite(train_loss):
            raise DivergenceError(f"epoch {epoch}: non-finite training loss")
        if state.initial_loss is None:
            state.initial_loss = train_loss
        state.blowup_streak = state.blowup_streak + 1 if train_loss > 10 * state.initial_loss else 0
        if state.blowup_streak >= 3:
            raise DivergenceError(f"epoch {epoch}: loss {train_loss:.4g} above 10x the initial "
                                  f"{state.initial_loss:.4g} for 3 consecutive epochs")
        ev = evaluate(model, test_ds, cfg.batch_size)
        m = Metrics(epoch, train_loss, hits / seen, ev.top1, ev.top5, time.perf_counter() - t0)
        history.append(m)
        state.epoch += 1
        log.info("epoch %d lr %.4g loss %.4f train %.3f test %.3f", epoch, lr, train_loss, m.train_top1, m.test_top1)
        if out is not None:
            with metrics_path.open("a", newline="") as fh:
                csv.writer(fh).writerow(m.row())
            final = state.epoch == cfg.epochs
            if final or (checkpoint_every and state.epoch % checkpoint_every == 0):
                save_checkpoint(out / f"ckpt_{state.epoch}.upl", model, cfg, state)
        if on_epoch is not None:
            on_epoch(m)
    return history


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ----------------------------------------------------------------- checkpoints

def checkpoint_tensors(model: Model, cfg: Optional[TrainConfig], state: Optional[TrainState]) -> dict[str, np.ndarray]:
    tensors: dict[str, np.ndarray] = {}
    tensors.update(model.state_arrays())
    for name, p in model.params.items():
        tensors[ckpt.MOMENTUM_PREFIX + name] = p.momentum_buffer
    tensors["meta.model_config"] = ckpt.encode_json(model.config.to_dict())
    if cfg is not None:
        tensors["meta.train_config"] = ckpt.encode_json(asdict(cfg))
    if state is not None:
        tensors["meta.epoch"] = np.array([state.epoch], dtype=np.float64)
        tensors["meta.rng_state"] = ckpt.encode_json(state.rng.bit_generator.state)
        tensors["meta.progress"] = ckpt.encode_json(
            {"initial_loss": state.initial_loss, "blowup_streak": state.blowup_streak,
             "loss_trace": [repr(v) for v in state.loss_trace]})
    return tensors


def save_checkpoint(path, model: Model, cfg: Optional[TrainConfig] = None,
                    state: Optional[TrainState] = None) -> Path:
    return ckpt.save(path, checkpoint_tensors(model, cfg, state))


def load_checkpoint(path) -> tuple[Model, Optional[TrainConfig], TrainState]:
    """Rebuild the model from its config echo and restore every tensor."""
    tensors = ckpt.load(path)
    try:
        mcfg = ModelConfig.from_dict(ckpt.decode_json(tensors["meta.model_config"]))
    except KeyError:
        raise ckpt.CheckpointError("checkpoint has no model config") from None
    model = build_model(mcfg, seed=0)
    for name, p in model.params.items():
        if name not in tensors:
            raise ckpt.CheckpointError(f"checkpoint lacks parameter {name}")
        if tensors[name].shape != p.shape:
            raise ckpt.CheckpointError(f"{name}: shape {tensors[name].shape} != {p.shape}")
        p.data[...] = tensors[name]
        mom = tensors.get(ckpt.MOMENTUM_PREFIX + name)
        if mom is not None:
            p.momentum_buffer[...] = mom
    for name, buf in model.buffers.items():
        if name not in tensors:
            raise ckpt.CheckpointError(f"checkpoint lacks buffer {name}")
        buf[...] = tensors[name]
    cfg = None
    if "meta.train_config" in tensors:
        cfg = TrainConfig(**ckpt.decode_json(tensors["meta.train_config"]))
    state = TrainState()
    if "meta.epoch" in tensors:
        state.epoch = int(tensors["meta.epoch"][0])
    if "meta.rng_state" in tensors:
        state.rng.bit_generator.state = ckpt.decode_json(tensors["meta.rng_state"])
    if "meta.progress" in tensors:
        prog = ckpt.decode_json(tensors["meta.progress"])
        state.initial_loss = prog["initial_loss"]
        state.blowup_streak = prog["blowup_streak"]
        state.loss_trace = [float(v) for v in prog["loss_trace"]]
    return model, cfg, state


# ------------------------------------------------------------------ gradcheck

@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: str
    worst_index: int
    n_checked: int
    per_param: dict[str, float]
    tolerance: Optional[float] = None
    n_skipped: int = 0

    @property
    def passed(self) -> bool:
        return self.n_checked > 0 and (self.tolerance is None or self.max_rel_err < self.tolerance)


def perturb_pooling(model: Model, scale: float = 0.5, seed: int = 0) -> None:
    """Add N(0, scale^2) noise to every pooling-layer parameter in place.

    Freshly built learnable poolings start at a symmetric point (zero output
    layer, zero gates) where many of their gradients vanish identically.  A
    gradient check run there would say little, so checks perturb first.
    """
    rng = np.random.default_rng(seed)
    for pool in model.pool_layers():
        for p in pool.params.values():
            p.data += rng.normal(0.0, scale, p.shape)


def grad_check(model: Model, x: Tensor, labels: np.ndarray, tolerance: Optional[float] = None,
               n_samples: int = 2000, h: float = 1e-4, seed: int = 0,
               floor: float = 1e-6) -> GradCheckReport:
    """Compare backprop against central differences on sampled parameter entries.

    The loss is the training-mode cross-entropy on ``x``.  Entries are drawn
    uniformly over all parameters until ``n_samples`` have been checked.
    The numeric derivative uses the fourth-order stencil
    (f(-2h) - 8 f(-h) + 8 f(h) - f(2h)) / 12h.  With h = 1e-4 its truncation
    error is negligible and round-off stays near 1e-12, which matters because
    many entries of a deep network have gradients around 1e-6.

    ReLU and max-selection make the loss piecewise smooth.  When a probe
    lands on a different piece than the unperturbed point (some ReLU mask or
    argmax changed) the central difference does not estimate the derivative,
    so that entry is counted in ``n_skipped`` and another one is drawn.

    Relative error uses max(|analytic|, |numeric|, floor) as denominator so
    that entries whose true gradient is zero are judged on absolute error.
    Batch-norm running buffers are restored afterwards.
    """
    if get_precision() != 64 or any(p.data.dtype != np.float64 for p in model.parameters()):
        raise ValueError("grad_check needs a 64-bit model (build it under precision(64))")
    saved = {k: v.copy() for k, v in model.buffers.items()}
    params = model.parameters()
    names = list(model.params)

    def probe() -> tuple[float, list[int]]:
        with no_grad(), branch_log() as log:
            logits, _ = model(x, training=True)
            return cross_entropy(logits, labels).item(), log

    for p in params:
        p.zero_grad()
    with Tape() as tape:
        logits, _ = model(x, training=True)
        loss = cross_entropy(logits, labels)
    backward(loss, tape)
    analytic = [p.grad.copy() for p in params]
    _, base_branches = probe()

    sizes = np.array([p.size for p in params])
    total = int(sizes.sum())
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    order = np.random.default_rng(seed).permutation(total)

    worst = (0.0, "", -1)
    per_param: dict[str, float] = {}
    checked = skipped = 0
    for flat_id in order:
        if checked >= n_samples:
            break
        pi = int(np.searchsorted(offsets, flat_id, side="right") - 1)
        i = int(flat_id - offsets[pi])
        flat = params[pi].data.reshape(-1)
        orig = flat[i]
        values = {}
        smooth = True
        for step in (-2, -1, 1, 2):
            flat[i] = orig + step * h
            values[step], branches = probe()
            smooth = smooth and branches == base_branches
        flat[i] = orig
        if not smooth:
            skipped += 1
            continue
        checked += 1
        numeric = (values[-2] - 8 * values[-1] + 8 * values[1] - values[2]) / (12 * h)
        err = float(relative_error(analytic[pi].reshape(-1)[i], numeric, floor))
        name = names[pi]
        per_param[name] = max(per_param.get(name, 0.0), err)
        if err > worst[0] or worst[2] < 0:
            worst = (err, name, i)
    for k, v in saved.items():
        model.buffers[k][...] = v
    for p in params:
        p.zero_grad()
    return GradCheckReport(worst[0], worst[1], worst[2], checked, per_param, tolerance, skipped)
