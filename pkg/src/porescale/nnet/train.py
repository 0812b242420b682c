"""Epoch-driven SGD training with gradient accumulation and weight averaging.

Batches larger than the minibatch are split into accumulation chunks
whose loss gradients share one denominator, so the applied update equals
the exact full-batch mean regardless of chunking. Shuffling and
augmentation draw from per-epoch derived seeds, making whole runs
reproducible bit for bit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..evaluate import macro_accuracy, micro_accuracy
from ..seeds import derive_seed
from .augment import AugmentParams, augment
from .layers import Model, cross_entropy_loss
from .optim import SGD, MultiStepLR, SwaState


@dataclass(frozen=True)
class TrainConfig:
    lr: float
    batch_size: int
    epochs: int
    minibatch_size: int | None = None
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_milestones: tuple[int, ...] = ()
    lr_factor: float = 0.1
    swa_start_epoch: int | None = None
    augment_params: AugmentParams | None = None
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        mb = self.minibatch_size
        if mb is not None and (mb < 1 or self.batch_size % mb):
            raise ValueError("minibatch_size must divide batch_size")
        if self.swa_start_epoch is not None and self.swa_start_epoch < 0:
            raise ValueError("swa_start_epoch must be non-negative")

    @property
    def chunk_size(self) -> int:
        return self.batch_size if self.minibatch_size is None else self.minibatch_size


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    val_macro: float
    val_micro: float


@dataclass
class TrainResult:
    model: Model
    history: list[EpochStats] = field(default_factory=list)
    swa_model: Model | None = None

    def best_model(self) -> Model:
        return self.swa_model if self.swa_model is not None else self.model


def predict_logits(model: Model, images: np.ndarray, chunk: int = 256) -> np.ndarray:
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 3:
        raise ValueError("expected (N, H, W) images")
    out = []
    for lo in range(0, len(images), chunk):
        out.append(model.forward(images[lo:lo + chunk, None, :, :]))
    return np.concatenate(out, axis=0)


def predict_labels(model: Model, images: np.ndarray, chunk: int = 256) -> np.ndarray:
    return predict_logits(model, images, chunk).argmax(axis=1)


def _epoch_batch(images, labels, idx, params, rng, fill):
    if params is None:
        batch = images[idx]
    else:
        batch = np.stack([augment(images[i], params, rng, fill) for i in idx.tolist()])
    return batch[:, None, :, :], labels[idx]


def train(
    model: Model,
    train_images: np.ndarray,
    train_labels: np.ndarray,
    val_images: np.ndarray,
    val_labels: np.ndarray,
    config: TrainConfig,
    dataset_mean: float | None = None,
    on_epoch=None,
) -> TrainResult:
    train_images = np.asarray(train_images, dtype=np.float32)
    train_labels = np.asarray(train_labels, dtype=np.int64)
    if train_images.ndim != 3 or len(train_images) != len(train_labels):
        raise ValueError("training images must be (N, H, W) with one label each")
    if len(train_images) == 0:
        raise ValueError("empty training set")
    fill = float(train_images.mean()) if dataset_mean is None else float(dataset_mean)

    opt = SGD(model, config.lr, config.momentum, config.weight_decay)
    sched = MultiStepLR(config.lr, config.lr_milestones, config.lr_factor)
    swa = SwaState(model) if config.swa_start_epoch is not None else None
    result = TrainResult(model=model)

    n = len(train_images)
    for epoch in range(config.epochs):
        opt.lr = sched.lr_at(epoch)
        perm = np.random.default_rng(derive_seed(config.seed, "epoch-shuffle", epoch)).permutation(n)
        rng_aug = np.random.default_rng(derive_seed(config.seed, "augment", epoch))

        loss_sum = 0.0
        for b_lo in range(0, n, config.batch_size):
            idx = perm[b_lo:b_lo + config.batch_size]
            model.zero_grad()
            for c_lo in range(0, len(idx), config.chunk_size):
                sub = idx[c_lo:c_lo + config.chunk_size]
                xb, yb = _epoch_batch(train_images, train_labels, sub,
                                      config.augment_params, rng_aug, fill)
                logits = model.forward(xb)
                loss, grad = cross_entropy_loss(logits, yb, grad_denom=len(idx))
                model.backward(grad)
                loss_sum += loss * len(sub)
            opt.step()
        train_loss = loss_sum / n

        val_pred = predict_labels(model, val_images) if len(val_images) else np.empty(0, np.int64)
        stats = EpochStats(
            epoch=epoch,
            lr=opt.lr,
            train_loss=train_loss,
            val_macro=macro_accuracy(val_labels, val_pred) if len(val_images) else float("nan"),
            val_micro=micro_accuracy(val_labels, val_pred) if len(val_images) else float("nan"),
        )
        result.history.append(stats)

        if swa is not None and epoch >= config.swa_start_epoch:
            swa.update(model)
        if on_epoch is not None:
            on_epoch(stats)

    if swa is not None and swa.n_snapshots:
        averaged = model.copy()
        swa.apply_to(averaged)
        result.swa_model = averaged
    return result


def write_training_log(path, history: list[EpochStats]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "lr", "train_loss", "val_macro", "val_micro"])
        for row in history:
            writer.writerow([row.epoch, f"{row.lr:.10g}", f"{row.train_loss:.8f}",
                             f"{row.val_macro:.6f}", f"{row.val_micro:.6f}"])


def read_training_log(path) -> list[EpochStats]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(EpochStats(int(row["epoch"]), float(row["lr"]),
                                  float(row["train_loss"]), float(row["val_macro"]),
                                  float(row["val_micro"])))
    return out
