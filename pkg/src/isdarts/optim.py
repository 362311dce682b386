"""Parameters, Nesterov SGD and the cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, UsageError
from .tensor import Tensor


class Parameter:
    """A trainable tensor plus its momentum buffer."""

    def __init__(self, data, name: str = ""):
        self.value = Tensor(data, requires_grad=True)
        self.momentum_buffer = np.zeros_like(self.value.data)
        self.name = name

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    @property
    def grad(self) -> Optional[np.ndarray]:
        return self.value.grad

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


@dataclass(frozen=True)
class TrainHyper:
    lr_max: float = 0.025
    lr_min: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    grad_clip_norm: float = 5.0
    batch_size: int = 64

    def __post_init__(self):
        if not 0 <= self.lr_min <= self.lr_max:
            raise ConfigError("need 0 <= lr_min <= lr_max", "hyper.lr_min")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)", "hyper.momentum")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0", "hyper.weight_decay")
        if self.grad_clip_norm <= 0:
            raise ConfigError("grad_clip_norm must be > 0", "hyper.grad_clip_norm")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ConfigError("batch_size must be a positive integer", "hyper.batch_size")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainHyper":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown field(s) {sorted(extra)}", "hyper")
        return cls(**d)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def cosine_lr(epoch: int, total_epochs: int, hyper: TrainHyper) -> float:
    if total_epochs <= 0:
        return hyper.lr_max
    return hyper.lr_min + 0.5 * (hyper.lr_max - hyper.lr_min) * (
        1 + math.cos(math.pi * epoch / total_epochs)
    )


def zero_grad(params: Sequence[Parameter]) -> None:
    for p in params:
        p.value.zero_grad()


def sgd_nesterov_step(params: Sequence[Parameter], lr: float, hyper: TrainHyper) -> float:
    """One Nesterov SGD update in place; returns the pre-clip gradient norm.

    Order: coupled L2 decay (g + wd*w), global norm clipping, then
    ``buf = momentum*buf + g``; ``w -= lr * (g + momentum*buf)``.
    """
    grads = []
    for p in params:
        if p.grad is None:
            raise UsageError(f"parameter {p.name or p.shape} has no gradient")
        g = p.grad
        if hyper.weight_decay:
            g = g + hyper.weight_decay * p.data
        grads.append(g)
    total = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
    if total > hyper.grad_clip_norm:
        scale = hyper.grad_clip_norm / total
        grads = [g * scale for g in grads]
    m = hyper.momentum
    for p, g in zip(params, grads):
        buf = p.momentum_buffer
        buf *= m
        buf += g
        p.value.data -= (lr * (g + m * buf)).astype(p.data.dtype, copy=False)
    return total
