"""SGD with momentum, a milestone step schedule, and weight averaging."""

from __future__ import annotations

import numpy as np

from .layers import Model


class SGD:
    """Heavy-ball update with decoupled-from-nothing weight decay.

    v <- momentum * v + grad + weight_decay * w, then w <- w - lr * v.
    Decay enters the velocity, matching the classic L2 formulation.
    """

    def __init__(self, model: Model, lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        if lr <= 0 or not 0 <= momentum < 1 or weight_decay < 0:
            raise ValueError("bad optimizer hyperparameters")
        self.model = model
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self._velocity = {name: np.zeros_like(arr) for name, _, _, arr in model.named_params()}

    def step(self) -> None:
        for name, i, key, w in self.model.named_params():
            g = self.model.layers[i].grads[key]
            v = self._velocity[name]
            v *= self.momentum
            v += g
            if self.weight_decay:
                v += self.weight_decay * w
            w -= self.lr * v


class MultiStepLR:
    """lr(epoch) = base * factor ** (number of milestones <= epoch)."""

    def __init__(self, base_lr: float, milestones: tuple[int, ...], factor: float = 0.1):
        if base_lr <= 0 or factor <= 0:
            raise ValueError("bad schedule hyperparameters")
        if list(milestones) != sorted(set(milestones)):
            raise ValueError("milestones must be strictly increasing")
        self.base_lr = float(base_lr)
        self.milestones = tuple(int(m) for m in milestones)
        self.factor = float(factor)

    def lr_at(self, epoch: int) -> float:
        drops = sum(1 for m in self.milestones if m <= epoch)
        return self.base_lr * self.factor ** drops


class SwaState:
    """Running mean of model weights, snapshot by snapshot."""

    def __init__(self, model: Model):
        self._avg = {name: np.zeros(arr.shape, dtype=np.float64) for name, _, _, arr in model.named_params()}
        self.n_snapshots = 0

    def update(self, model: Model) -> None:
        k = self.n_snapshots
        for name, _, _, arr in model.named_params():
            avg = self._avg[name]
            avg += (arr.astype(np.float64) - avg) / (k + 1)
        self.n_snapshots = k + 1

    def apply_to(self, model: Model) -> None:
        if self.n_snapshots == 0:
            raise RuntimeError("no snapshots averaged yet")
        model.load_state({name: avg for name, avg in self._avg.items()})
