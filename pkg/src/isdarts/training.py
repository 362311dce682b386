"""Mini-batch training and evaluation loops shared by every search driver."""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from . import functional as F
from .datasets import Split, augment
from .errors import NumericalError, UsageError
from .optim import TrainHyper, sgd_nesterov_step
from .search_space import Mask
from .tensor import Tensor, backward, default_dtype, no_grad


def batches(split: Split, batch_size: int, rng: Optional[np.random.Generator] = None,
            drop_last: bool = True) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield (images, labels) mini-batches; shuffled when ``rng`` is given."""
    n = len(split)
    order = rng.permutation(n) if rng is not None else np.arange(n)
    stop = n - n % batch_size if drop_last and n >= batch_size else n
    for start in range(0, stop, batch_size):
        idx = order[start:start + batch_size]
        yield split.images[idx], split.labels[idx]


def concat_splits(*splits: Split) -> Split:
    return Split(np.concatenate([s.images for s in splits]), np.concatenate([s.labels for s in splits]))


def train_step(model, images, labels, lr: float, hyper: TrainHyper,
               mask: Optional[Mask] = None, alpha=None) -> float:
    if len(labels) == 0:
        raise UsageError("empty batch")
    params = model.parameters()
    logits = model(Tensor(images.astype(default_dtype(), copy=False)), mask=mask, alpha=alpha, training=True)
    loss = F.softmax_cross_entropy(logits, labels)
    backward(loss, params)
    sgd_nesterov_step(params, lr, hyper)
    return loss.item()


def train_epoch(model, split: Split, lr: float, hyper: TrainHyper, rng: np.random.Generator,
                mask: Optional[Mask] = None, use_augment: bool = False) -> float:
    """One pass over ``split``; returns the mean training loss."""
    losses = []
    for images, labels in batches(split, hyper.batch_size, rng):
        if use_augment:
            images = augment(images, rng)
        loss = train_step(model, images, labels, lr, hyper, mask=mask)
        if not np.isfinite(loss):
            raise NumericalError("non-finite training loss")
        losses.append(loss)
    return float(np.mean(losses)) if losses else float("nan")


def evaluate(model, split: Split, mask: Optional[Mask] = None, batch_size: int = 256) -> float:
    """Top-1 accuracy in evaluation mode (norm layers use running statistics)."""
    if len(split) == 0:
        raise UsageError("cannot evaluate on an empty split")
    correct = 0
    with no_grad():
        for images, labels in batches(split, batch_size, drop_last=False):
            logits = model(Tensor(images.astype(default_dtype(), copy=False)), mask=mask, training=False)
            correct += int((logits.data.argmax(axis=1) == labels).sum())
    return correct / len(split)
