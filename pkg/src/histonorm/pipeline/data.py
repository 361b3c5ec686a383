"""Patch datasets, rotation augmentation and class-balanced sampling."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..color_math import load_rgb, save_rgb
from ..errors import BadPatchSize, BatchTooSmall, EmptyClass, UnreadableImage

PATCH_SIZE = 150
IMAGE_SUFFIXES = (".png",)
# Optional slide tag at the start of a patch file name, e.g. "slide3_000017.png".
SLIDE_TAG = re.compile(r"^slide(\d+)_")


@dataclass(frozen=True)
class LabeledPatch:
    image: np.ndarray
    label: int

    def __post_init__(self):
        if self.image.shape != (PATCH_SIZE, PATCH_SIZE, 3) or self.image.dtype != np.uint8:
            raise BadPatchSize(f"patch must be uint8 {PATCH_SIZE}x{PATCH_SIZE}x3, got {self.image.shape}")


@dataclass
class Dataset:
    """Patches stored as one ``(n, 150, 150, 3)`` uint8 array.

    ``slides`` optionally tags every patch with the slide (staining batch) it
    came from; slide-level stain normalization fits one source template per
    slide.
    """

    images: np.ndarray
    labels: np.ndarray
    class_names: list[str]
    slides: np.ndarray | None = None

    def __post_init__(self):
        self.images = np.asarray(self.images)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.class_names = list(self.class_names)
        k = len(self.class_names)
        if k < 2:
            raise ValueError(f"a dataset needs at least 2 classes, got {k}")
        if self.images.dtype != np.uint8 or self.images.shape[1:] != (PATCH_SIZE, PATCH_SIZE, 3):
            raise BadPatchSize(
                f"patches must be uint8 {PATCH_SIZE}x{PATCH_SIZE}x3, got {self.images.dtype} "
                f"{self.images.shape[1:]}"
            )
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError("one label per patch required")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= k):
            raise ValueError("label out of range")
        counts = np.bincount(self.labels, minlength=k)
        if np.any(counts == 0):
            raise EmptyClass(f"class {self.class_names[int(np.argmin(counts))]!r} has no patches")
        if self.slides is not None:
            self.slides = np.asarray(self.slides, dtype=np.int64)
            if self.slides.shape != self.labels.shape:
                raise ValueError("one slide id per patch required")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def __len__(self) -> int:
        return self.images.shape[0]

    def class_indices(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.labels == c) for c in range(self.num_classes)]

    def patch(self, i: int) -> LabeledPatch:
        return LabeledPatch(self.images[i], int(self.labels[i]))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.images[idx],
            self.labels[idx],
            self.class_names,
            None if self.slides is None else self.slides[idx],
        )

    def with_images(self, images: np.ndarray) -> "Dataset":
        return Dataset(images, self.labels, self.class_names, self.slides)

    def split(self, per_class: int, seed: int) -> tuple["Dataset", "Dataset"]:
        """Hold out ``per_class`` random patches of every class.

        Returns ``(rest, held_out)``. Classes keep at least one patch in
        ``rest``.
        """
        rng = np.random.default_rng(seed)
        held = []
        for idx in self.class_indices():
            n = min(per_class, idx.size - 1)
            held.append(rng.choice(idx, size=n, replace=False) if n > 0 else idx[:0])
        held = np.sort(np.concatenate(held))
        rest = np.setdiff1d(np.arange(len(self)), held)
        return self.subset(rest), self.subset(held)


def load_dataset(root: str | os.PathLike) -> Dataset:
    """Read ``root/<class>/*.png``; classes in lexicographic directory order.

    When every file name starts with a ``slide<N>_`` tag the slide ids are
    kept on the dataset.
    """
    root = Path(root)
    if not root.is_dir():
        raise UnreadableImage(f"{root}: not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    images, labels, slides = [], [], []
    for label, d in enumerate(class_dirs):
        files = sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise EmptyClass(f"{d}: no patches")
        for f in files:
            img = load_rgb(f)
            if img.shape != (PATCH_SIZE, PATCH_SIZE, 3):
                raise BadPatchSize(f"{f}: size {img.shape[1]}x{img.shape[0]}, expected {PATCH_SIZE}x{PATCH_SIZE}")
            images.append(img)
            labels.append(label)
            tag = SLIDE_TAG.match(f.name)
            slides.append(int(tag.group(1)) if tag else None)
    if len(class_dirs) < 2:
        raise EmptyClass(f"{root}: need at least 2 class directories, found {len(class_dirs)}")
    slide_ids = None if any(s is None for s in slides) else np.array(slides)
    return Dataset(np.stack(images), np.array(labels), [d.name for d in class_dirs], slide_ids)


def save_dataset(dataset: Dataset, root: str | os.PathLike) -> None:
    root = Path(root)
    for c, name in enumerate(dataset.class_names):
        d = root / name
        d.mkdir(parents=True, exist_ok=True)
        for j, i in enumerate(np.flatnonzero(dataset.labels == c)):
            tag = "" if dataset.slides is None else f"slide{dataset.slides[i]}_"
            save_rgb(dataset.images[i], d / f"{tag}{j:06d}.png")


def rotate90(image: np.ndarray, k: int = 1) -> np.ndarray:
    """Rotate an (H, W, C) image counter-clockwise by ``k`` quarter turns."""
    return np.ascontiguousarray(np.rot90(image, k, axes=(0, 1)))


def rotations_of(patch: LabeledPatch) -> list[LabeledPatch]:
    """The patch and its 90, 180 and 270 degree rotations."""
    return [LabeledPatch(rotate90(patch.image, k), patch.label) for k in range(4)]


def balanced_counts(batch_size: int, num_classes: int, rng: np.random.Generator) -> np.ndarray:
    if batch_size < num_classes:
        raise BatchTooSmall(f"batch size {batch_size} is smaller than the {num_classes} classes")
    counts = np.full(num_classes, batch_size // num_classes, dtype=np.int64)
    extra = rng.choice(num_classes, size=batch_size % num_classes, replace=False)
    counts[extra] += 1
    return counts


def sample_balanced_batch(
    dataset: Dataset,
    batch_size: int,
    rng: np.random.Generator,
    augment: bool = True,
    class_indices: list[np.ndarray] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw a class-balanced mini-batch.

    Every class gets ``batch_size // K`` patches and the remainder goes to
    distinct classes picked at random. Patches are drawn with replacement;
    with ``augment`` each one is rotated by a random multiple of 90 degrees.

    Returns:
        ``(images, labels)`` with images of shape ``(batch_size, 150, 150, 3)``.
    """
    if class_indices is None:
        class_indices = dataset.class_indices()
    counts = balanced_counts(batch_size, dataset.num_classes, rng)
    picks = np.concatenate([rng.choice(idx, size=n, replace=True) for idx, n in zip(class_indices, counts)])
    labels = np.repeat(np.arange(dataset.num_classes), counts)
    images = dataset.images[picks]
    if augment:
        turns = rng.integers(0, 4, size=batch_size)
        for k in (1, 2, 3):
            sel = np.flatnonzero(turns == k)
            if sel.size:
                images[sel] = np.rot90(images[sel], k, axes=(1, 2))
    return images, labels
