"""AdamW with a cosine-annealed learning rate, over plain numpy parameter dicts."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer recipe; defaults follow the linear-probe hyperparameter table."""

    epochs: int = 31
    batch: int = 64
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-2
    lr_min: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if not self.lr > self.lr_min > 0:
            raise ValueError(f"need lr > lr_min > 0, got lr={self.lr}, lr_min={self.lr_min}")
        if not all(0 < b < 1 for b in self.betas):
            raise ValueError(f"betas must lie in (0, 1), got {self.betas}")
        if self.epochs < 1 or self.batch < 1:
            raise ValueError("epochs and batch must be >= 1")
        if self.eps <= 0 or self.weight_decay < 0:
            raise ValueError("eps must be > 0 and weight_decay >= 0")


def cosine_lr(epoch: int, n_epochs: int, lr: float, lr_min: float) -> float:
    """Learning rate for ``epoch`` (0-based); reaches ``lr_min`` on the last epoch."""
    if n_epochs <= 1:
        return lr
    return lr_min + 0.5 * (lr - lr_min) * (1.0 + math.cos(math.pi * epoch / (n_epochs - 1)))


class AdamW:
    """Decoupled weight decay Adam. Parameters are updated in place."""

    def __init__(self, params: dict[str, np.ndarray], betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=1e-2, no_decay=()):
        self.params = params
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.no_decay = set(no_decay)
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            if k not in self.no_decay:
                p *= 1.0 - lr * self.weight_decay
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
