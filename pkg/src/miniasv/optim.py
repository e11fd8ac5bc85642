"""Plain SGD with momentum and decoupled-from-nothing weight decay (the
classic formulation: decay is added to the gradient), plus a
reduce-on-plateau learning-rate scheduler.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .tensor import Tensor


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 1e-3
    batch_size: int = 64
    max_steps: int = 2000
    validate_every: int = 200
    patience: int = 2
    lr_decay: float = 0.1
    min_lr: float = 1e-6
    margin_warmup_steps: int = 1000
    # ramp the inter-class penalty m' on the same warmup as the target margin
    # (default: m' is constant from step 0)
    ramp_extra_margin: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0 or self.min_lr <= 0:
            raise ConfigError("learning_rate must be >= 0 and min_lr > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.batch_size < 1 or self.max_steps < 1 or self.validate_every < 1:
            raise ConfigError("batch_size, max_steps and validate_every must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if not 0.0 < self.lr_decay < 1.0:
            raise ConfigError("lr_decay must be in (0, 1)")
        if self.margin_warmup_steps < 1:
            raise ConfigError("margin_warmup_steps must be >= 1")


class SGD:
    """v = momentum * v + grad + weight_decay * p;  p -= lr * v.

    Parameters named in ``frozen`` are left untouched entirely.
    """

    def __init__(self, params: dict[str, Tensor], lr: float, momentum: float = 0.9,
                 weight_decay: float = 0.0, frozen: tuple[str, ...] = ()):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.frozen = frozenset(frozen)
        self._velocity = {
            k: np.zeros_like(v) for k, v in params.items() if k not in self.frozen
        }

    def step(self, grads: dict[str, Tensor]) -> None:
        for name, p in self.params.items():
            if name in self.frozen:
                continue
            g = grads[name] + self.weight_decay * p
            v = self._velocity[name]
            v *= self.momentum
            v += g
            p -= self.lr * v


class PlateauScheduler:
    """Multiply lr by ``factor`` after ``patience`` consecutive non-improving
    validations; never below ``min_lr``, never increasing."""

    def __init__(self, optimizer: SGD, patience: int = 2, factor: float = 0.1,
                 min_lr: float = 1e-6):
        self.optimizer = optimizer
        self.patience = patience
        self.factor = factor
        self.min_lr = min_lr
        self.best = np.inf
        self.bad_count = 0

    def update(self, val_loss: float) -> bool:
        """Feed one validation loss; returns True when lr was decayed."""
        if val_loss < self.best:
            self.best = val_loss
            self.bad_count = 0
            return False
        self.bad_count += 1
        if self.bad_count >= self.patience:
            self.bad_count = 0
            new_lr = max(self.optimizer.lr * self.factor, self.min_lr)
            if new_lr < self.optimizer.lr:
                self.optimizer.lr = new_lr
                return True
        return False
