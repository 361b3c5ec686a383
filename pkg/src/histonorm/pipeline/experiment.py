"""Train/test grid with and without stain normalization."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..stain_norm import TemplateParams, fit_template, transfer_pixels
from .data import PATCH_SIZE, Dataset
from .evaluation import evaluate
from .training import TrainConfig, TrainResult, predict_patches, train

DatasetNormalizer = Callable[[Dataset, TemplateParams], Dataset]

# Patches per slide used to estimate that slide's stain appearance.
SLIDE_SAMPLE = 64


def slide_mosaic(images: np.ndarray, limit: int = SLIDE_SAMPLE) -> np.ndarray:
    """Stack up to ``limit`` evenly spaced patches into one tall image."""
    pick = np.unique(np.linspace(0, images.shape[0] - 1, min(limit, images.shape[0])).round().astype(int))
    return images[pick].reshape(-1, PATCH_SIZE, 3)


def normalize_by_slide(dataset: Dataset, template: TemplateParams) -> Dataset:
    """Map every slide onto ``template``.

    One source template is fitted per slide (all patches form one slide when
    the dataset carries no slide ids), then the fixed pixel-wise transfer is
    applied to each of that slide's patches.
    """
    slides = dataset.slides if dataset.slides is not None else np.zeros(len(dataset), dtype=np.int64)
    out = np.empty_like(dataset.images)
    for s in np.unique(slides):
        idx = np.flatnonzero(slides == s)
        source = fit_template(slide_mosaic(dataset.images[idx]), template.estimation, template.optics)
        out[idx] = transfer_pixels(dataset.images[idx], source, template)
    return dataset.with_images(out)


def identity_normalizer(dataset: Dataset, template: TemplateParams) -> Dataset:
    return dataset


@dataclass(frozen=True)
class ExperimentGrid:
    """Accuracies of the four train/test normalization combinations.

    A: raw training, raw testing. B: raw training, normalized testing.
    C: normalized training and testing. D: normalized training, raw testing.
    """

    a: float
    b: float
    c: float
    d: float

    def cell(self, train_sn: bool, test_sn: bool) -> float:
        return {(False, False): self.a, (False, True): self.b, (True, True): self.c, (True, False): self.d}[
            (train_sn, test_sn)
        ]

    def to_text(self) -> str:
        rows = [
            ("", "training w/ SN", "training w/o SN"),
            ("testing w/ SN", f"{100 * self.c:.2f}% [C]", f"{100 * self.b:.2f}% [B]"),
            ("testing w/o SN", f"{100 * self.d:.2f}% [D]", f"{100 * self.a:.2f}% [A]"),
        ]
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        return "\n".join(" | ".join(r[i].ljust(widths[i]) for i in range(3)).rstrip() for r in rows) + "\n"


@dataclass
class GridRun:
    grid: ExperimentGrid
    raw_model: TrainResult
    normalized_model: TrainResult


def _accuracy(model: TrainResult, data: Dataset) -> float:
    pred = predict_patches(model.spec, model.params, data.images).argmax(axis=1)
    return evaluate(pred, data.labels, data.num_classes).accuracy


def run_grid(
    train_data: Dataset,
    test_data: Dataset,
    template: TemplateParams,
    config: TrainConfig,
    normalizer: DatasetNormalizer = normalize_by_slide,
) -> GridRun:
    """Like :func:`run_experiment_grid`, also returning both trained models."""
    if train_data.class_names != test_data.class_names:
        raise ValueError("training and test data must share their class list")
    train_sn = normalizer(train_data, template)
    test_sn = normalizer(test_data, template)
    raw = train(train_data, config)
    norm = train(train_sn, config)
    grid = ExperimentGrid(
        a=_accuracy(raw, test_data),
        b=_accuracy(raw, test_sn),
        c=_accuracy(norm, test_sn),
        d=_accuracy(norm, test_data),
    )
    return GridRun(grid, raw, norm)


def run_experiment_grid(
    train_data: Dataset,
    test_data: Dataset,
    template: TemplateParams,
    config: TrainConfig,
    normalizer: DatasetNormalizer = normalize_by_slide,
) -> ExperimentGrid:
    """Train on raw and on normalized data, test each model on raw and on
    normalized data."""
    return run_grid(train_data, test_data, template, config, normalizer).grid
