"""SGD training with a one-cycle learning-rate schedule.

The schedule rises cosine-shaped from max_lr/div_factor to max_lr over the
warmup fraction of all steps, then anneals cosine-shaped down to
(max_lr/div_factor)/final_div_factor, stepping once per batch. The
checkpoint returned is the parameter snapshot at the epoch with minimal
validation loss (first occurrence on ties).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Mode, Tape, Tensor
from .errors import (
    EmptyDataset,
    NonFiniteGradient,
    NonFiniteLoss,
    StepOutOfRange,
)
from .model import HarModelConfig, ModelParams, build_model, forward_logits
from .preprocess import Window, sample_rotation


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 350
    batch_size: int = 64
    max_lr: float = 1e-3
    warmup_fraction: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4
    momentum: float = 0.0
    weight_decay: float = 0.0
    augment: bool = True
    seed: int = 0

    def validate(self) -> None:
        if not (0.0 < self.warmup_fraction < 1.0):
            raise StepOutOfRange(
                f"warmup_fraction must be in (0, 1), got {self.warmup_fraction}")
        if self.max_lr <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise StepOutOfRange("max_lr, batch_size, epochs must be positive")


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    lr_trace: list[float] = field(default_factory=list)
    best_epoch: int = 0


def one_cycle_lr(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Learning rate at a 0-indexed batch step of a total_steps-long run."""
    if step < 0 or step >= total_steps:
        raise StepOutOfRange(f"step {step} outside [0, {total_steps})")
    low = cfg.max_lr / cfg.div_factor
    final = low / cfg.final_div_factor
    peak_step = int(round(cfg.warmup_fraction * total_steps))
    peak_step = min(peak_step, total_steps - 1)
    if step <= peak_step:
        if peak_step == 0:
            return cfg.max_lr
        frac = step / peak_step
        return low + (cfg.max_lr - low) * 0.5 * (1.0 - math.cos(math.pi * frac))
    span = (total_steps - 1) - peak_step
    frac = (step - peak_step) / span
    return final + (cfg.max_lr - final) * 0.5 * (1.0 + math.cos(math.pi * frac))


def sgd_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    lr: float,
    momentum: float = 0.0,
    velocity: dict[str, np.ndarray] | None = None,
    weight_decay: float = 0.0,
) -> ModelParams:
    """In-place p <- p - lr*g, or with momentum: v <- m*v + g, p <- p - lr*v."""
    for name, tensor in params.tensors.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"gradient for {name!r} is not finite")
        if weight_decay:
            g = g + weight_decay * tensor.data
        if momentum:
            if velocity is None:
                raise NonFiniteGradient("momentum requires a velocity store")
            v = velocity.get(name)
            if v is None:
                v = np.zeros_like(tensor.data)
                velocity[name] = v
            v *= momentum
            v += g
            tensor.data -= lr * v
        else:
            tensor.data -= lr * g
    return params


def stack_windows(windows: Sequence[Window]) -> tuple[np.ndarray, np.ndarray]:
    """Stack labeled windows into (n, 3, L) data and (n,) target arrays."""
    usable = [w for w in windows if w.label is not None]
    if not usable:
        raise EmptyDataset("no labeled windows")
    data = np.stack([w.data for w in usable])
    targets = np.array([int(w.label) for w in usable], dtype=np.int64)
    return data, targets


def augment_batch(batch: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Rotate each window by its own random rotation (norm-preserving)."""
    rotations = np.stack([sample_rotation(rng) for _ in range(batch.shape[0])])
    return np.einsum("bij,bjl->bil", rotations, batch)


def evaluate_loss(params: ModelParams, data: np.ndarray, targets: np.ndarray,
                  batch_size: int = 256) -> tuple[float, float]:
    """Mean cross entropy and accuracy over all windows, eval mode."""
    n = data.shape[0]
    total_nll = 0.0
    correct = 0
    for i in range(0, n, batch_size):
        xb, yb = data[i:i + batch_size], targets[i:i + batch_size]
        logits = forward_logits(params, xb, Mode.EVAL)
        loss, probs = ad.softmax_cross_entropy(logits, yb)
        total_nll += loss.item() * xb.shape[0]
        correct += int((np.argmax(probs.data, axis=1) == yb).sum())
    return total_nll / n, correct / n


def _argmin_first(values: Sequence[float]) -> int:
    best, best_i = math.inf, 0
    for i, v in enumerate(values):
        if v < best:
            best, best_i = v, i
    return best_i


def train(
    model_cfg: HarModelConfig,
    train_cfg: TrainConfig,
    train_windows: Sequence[Window],
    val_windows: Sequence[Window],
) -> tuple[ModelParams, TrainReport]:
    """Fit the classifier; returns the best-validation snapshot and report.

    Each epoch reshuffles with the seeded generator, optionally rotates
    every window independently, and steps the scheduler once per batch.
    Caller guarantees train and validation subjects are disjoint.
    """
    train_cfg.validate()
    x_train, y_train = stack_windows(train_windows)
    x_val, y_val = stack_windows(val_windows)

    params = build_model(model_cfg)
    rng = np.random.default_rng(train_cfg.seed)
    n = x_train.shape[0]
    batches = math.ceil(n / train_cfg.batch_size)
    total_steps = train_cfg.epochs * batches
    velocity: dict[str, np.ndarray] = {}
    report = TrainReport()
    best_params = params.clone()
    best_val = math.inf
    step = 0

    for epoch in range(train_cfg.epochs):
        order = rng.permutation(n)
        epoch_nll = 0.0
        for b in range(batches):
            idx = order[b * train_cfg.batch_size:(b + 1) * train_cfg.batch_size]
            xb = x_train[idx]
            if train_cfg.augment:
                xb = augment_batch(xb, rng)
            yb = y_train[idx]
            params.zero_grad()
            with Tape() as tape:
                logits = forward_logits(params, Tensor(xb), Mode.TRAIN)
                loss, _ = ad.softmax_cross_entropy(logits, yb)
            value = loss.item()
            if not math.isfinite(value):
                raise NonFiniteLoss(
                    f"loss {value} at epoch {epoch}, batch {b}; "
                    f"try lowering max_lr")
            ad.backward(tape, loss)
            lr = one_cycle_lr(step, total_steps, train_cfg)
            report.lr_trace.append(lr)
            sgd_step(params, params.gradients(), lr,
                     momentum=train_cfg.momentum, velocity=velocity,
                     weight_decay=train_cfg.weight_decay)
            epoch_nll += value * xb.shape[0]
            step += 1
        report.train_loss.append(epoch_nll / n)
        val_loss, val_acc = evaluate_loss(params, x_val, y_val)
        report.val_loss.append(val_loss)
        report.val_acc.append(val_acc)
        if val_loss < best_val:
            best_val = val_loss
            best_params = params.clone()

    report.best_epoch = _argmin_first(report.val_loss)
    return best_params, report


def write_train_report(report: TrainReport, path: str | Path) -> None:
    """CSV export: epoch,train_loss,val_loss,val_acc."""
    lines = ["epoch,train_loss,val_loss,val_acc"]
    for e, (tr, vl, va) in enumerate(
            zip(report.train_loss, report.val_loss, report.val_acc)):
        lines.append(f"{e},{tr!r},{vl!r},{va!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
