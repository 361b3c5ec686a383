"""The mini-batch training loop."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..convnet.network import (
    CANONICAL_WIDTHS,
    NetworkParams,
    NetworkSpec,
    build_network,
    forward,
    loss_and_gradient,
)
from ..convnet.optim import AdamState, adam_step
from .data import Dataset, sample_balanced_batch


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters.

    ``validation_per_class`` patches of every class are held out once per
    run (chosen with ``seed``) and scored every ``validation_interval``
    iterations; 0 disables validation. ``widths`` sets the six hidden layer
    widths; the default is the full-size network.
    """

    iterations: int = 4000
    batch_size: int = 256
    learning_rate: float = 0.0003
    seed: int = 42
    augment_rotations: bool = True
    validation_interval: int = 100
    validation_per_class: int = 0
    widths: tuple[int, ...] = CANONICAL_WIDTHS

    def __post_init__(self):
        for name in ("iterations", "batch_size", "validation_interval"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.validation_per_class < 0:
            raise ValueError("validation_per_class must be non-negative")


@dataclass
class TrainResult:
    spec: NetworkSpec
    params: NetworkParams
    state: AdamState
    log: list[str] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    validation: list[tuple[int, float]] = field(default_factory=list)


def to_unit(images: np.ndarray, dtype=np.float32) -> np.ndarray:
    """8-bit images scaled to [0, 1]."""
    return np.asarray(images, dtype=dtype) / np.asarray(255.0, dtype=dtype)


def predict_patches(spec: NetworkSpec, params: NetworkParams, images: np.ndarray, batch: int = 64) -> np.ndarray:
    """``(N, K)`` class probabilities of 150x150 uint8 patches."""
    out = np.empty((images.shape[0], spec.num_classes), dtype=params.dtype)
    for i in range(0, images.shape[0], batch):
        probs = forward(spec, params, to_unit(images[i : i + batch], params.dtype))
        out[i : i + batch] = probs[:, 0, 0]
    return out


def train(
    dataset: Dataset,
    config: TrainConfig,
    on_log: Callable[[str], None] | None = None,
) -> TrainResult:
    """Sample balanced batches, back-propagate and apply ADAM updates.

    Every iteration logs ``iter <n> loss <loss>``, with ``val_acc <acc>``
    appended on validation iterations. Results depend only on the dataset
    and the config.
    """
    rng = np.random.default_rng(config.seed)
    train_set, val_set = dataset, None
    if config.validation_per_class > 0:
        train_set, val_set = dataset.split(config.validation_per_class, config.seed)
    spec, params = build_network(dataset.num_classes, seed=config.seed, widths=config.widths)
    state = AdamState.fresh(params)
    result = TrainResult(spec, params, state)
    class_indices = train_set.class_indices()

    for it in range(1, config.iterations + 1):
        images, labels = sample_balanced_batch(
            train_set, config.batch_size, rng, augment=config.augment_rotations, class_indices=class_indices
        )
        loss, grads = loss_and_gradient(spec, params, to_unit(images, params.dtype), labels)
        params, state = adam_step(params, grads, state, config.learning_rate)
        line = f"iter {it} loss {loss:.6f}"
        result.losses.append(loss)
        if val_set is not None and (it % config.validation_interval == 0 or it == config.iterations):
            acc = float(np.mean(predict_patches(spec, params, val_set.images).argmax(axis=1) == val_set.labels))
            result.validation.append((it, acc))
            line += f" val_acc {acc:.6f}"
        result.log.append(line)
        if on_log is not None:
            on_log(line)
    result.params, result.state = params, state
    return result
