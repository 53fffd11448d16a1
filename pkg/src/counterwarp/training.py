"""Supervised training loop for the classifiers."""

from __future__ import annotations

import numpy as np

from .datasets import Dataset
from .models import ClassifierModel, defense_forward
from .ops import softmax_cross_entropy
from .optim import AdamState, adam_step, sgd_step
from .tensor import Tape, Tensor

__all__ = ["train_classifier", "classification_accuracy"]


def train_classifier(model: ClassifierModel, dataset: Dataset, epochs: int = 10,
                     batch_size: int = 64, lr: float = 1e-3, seed: int = 0,
                     optimizer: str = "adam") -> list[float]:
    """Minimize cross-entropy with shuffled mini-batches; returns the mean
    loss per epoch."""
    x_all, y_all = dataset.stacked()
    rng = np.random.default_rng(seed)
    params = model.params()
    state = AdamState(params, lr=lr) if optimizer == "adam" else None
    epoch_losses = []
    for _ in range(epochs):
        perm = rng.permutation(len(dataset))
        losses = []
        for start in range(0, len(perm), batch_size):
            idx = perm[start:start + batch_size]
            xb, yb = Tensor(x_all[idx]), y_all[idx]
            with Tape(wrt=params) as tape:
                loss = softmax_cross_entropy(model.forward(xb), yb)
            tape.backward(loss)
            grads = [p.grad for p in params]
            if state is not None:
                adam_step(params, grads, state)
            else:
                sgd_step(params, grads, lr)
            losses.append(loss.item())
        epoch_losses.append(float(np.mean(losses)))
    return epoch_losses


def classification_accuracy(model: ClassifierModel, x: np.ndarray, y: np.ndarray,
                            defense=None, chunk: int = 256) -> float:
    """Top-1 accuracy, optionally through a defense transformer first."""
    correct = 0
    for start in range(0, len(x), chunk):
        xb = Tensor(x[start:start + chunk])
        if defense is not None:
            xb = defense_forward(defense, xb)
        correct += int((model.predict(xb) == y[start:start + chunk]).sum())
    return correct / len(x)
