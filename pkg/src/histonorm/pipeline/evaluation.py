"""Classification metrics and grouping of classes across label sets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import EmptyInput, LengthMismatch, UnmappedClass


@dataclass(frozen=True)
class Metrics:
    """Overall accuracy, confusion counts (rows truth, columns prediction) and
    one-vs-rest sensitivity and specificity per class.

    A rate whose denominator is zero (a class absent from the truth, or
    present in every sample) is reported as 0.0.
    """

    accuracy: float
    confusion: np.ndarray
    sensitivity: np.ndarray
    specificity: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.confusion.shape[0]

    def to_text(self, class_names: list[str] | None = None) -> str:
        names = class_names or [str(c) for c in range(self.num_classes)]
        lines = [f"accuracy={self.accuracy:.6f}"]
        for c, name in enumerate(names):
            lines.append(
                f"class={name} sensitivity={self.sensitivity[c]:.6f} specificity={self.specificity[c]:.6f}"
            )
        return "\n".join(lines) + "\n"


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros(num.shape, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def evaluate(predicted, truth, num_classes: int) -> Metrics:
    predicted = np.asarray(predicted, dtype=np.int64).ravel()
    truth = np.asarray(truth, dtype=np.int64).ravel()
    if predicted.size != truth.size:
        raise LengthMismatch(f"{predicted.size} predictions for {truth.size} labels")
    if truth.size == 0:
        raise EmptyInput("nothing to evaluate")
    for name, arr in (("prediction", predicted), ("label", truth)):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise ValueError(f"{name} outside [0, {num_classes})")
    confusion = np.bincount(truth * num_classes + predicted, minlength=num_classes**2).reshape(
        num_classes, num_classes
    )
    tp = np.diag(confusion)
    fn = confusion.sum(axis=1) - tp
    fp = confusion.sum(axis=0) - tp
    tn = truth.size - tp - fn - fp
    return Metrics(
        accuracy=float(tp.sum() / truth.size),
        confusion=confusion,
        sensitivity=_ratio(tp, tp + fn),
        specificity=_ratio(tn, tn + fp),
    )


@dataclass(frozen=True)
class ClassMapping:
    """Correspondence between a model's classes and a differently labeled
    ground truth.

    ``groups[g]`` names grouped class ``g``; ``prediction_groups`` and
    ``truth_groups`` send model class indices and ground-truth class indices
    to group indices. Indices listed as unmatched have no counterpart:
    their probability mass is dropped (predictions) or their samples are
    skipped (truth).
    """

    groups: tuple[str, ...]
    prediction_groups: dict[int, int]
    truth_groups: dict[int, int]
    unmatched_predictions: frozenset[int] = frozenset()
    unmatched_truth: frozenset[int] = frozenset()

    def __post_init__(self):
        for side, table, unmatched in (
            ("prediction", self.prediction_groups, self.unmatched_predictions),
            ("truth", self.truth_groups, self.unmatched_truth),
        ):
            both = set(table) & set(unmatched)
            if both:
                raise ValueError(f"{side} classes {sorted(both)} are both mapped and unmatched")
            if any(not 0 <= g < len(self.groups) for g in table.values()):
                raise ValueError(f"{side} mapping refers to a group outside 0..{len(self.groups) - 1}")

    @classmethod
    def identity(cls, names) -> "ClassMapping":
        table = {i: i for i in range(len(names))}
        return cls(tuple(names), table, dict(table))

    @classmethod
    def from_names(
        cls,
        groups,
        prediction_names,
        truth_names,
        unmatched_predictions=(),
        unmatched_truth=(),
    ) -> "ClassMapping":
        """Build from ``groups = [(group_name, [model classes], [truth classes]), ...]``."""
        pidx = {n: i for i, n in enumerate(prediction_names)}
        tidx = {n: i for i, n in enumerate(truth_names)}
        ptable, ttable = {}, {}
        for g, (_, preds, truths) in enumerate(groups):
            for lookup, table, members in ((pidx, ptable, preds), (tidx, ttable, truths)):
                for m in members:
                    if m not in lookup:
                        raise UnmappedClass(f"unknown class {m!r}")
                    if lookup[m] in table:
                        raise ValueError(f"class {m!r} appears in more than one group")
                    table[lookup[m]] = g
        return cls(
            tuple(name for name, _, _ in groups),
            ptable,
            ttable,
            frozenset(pidx[n] for n in unmatched_predictions),
            frozenset(tidx[n] for n in unmatched_truth),
        )


# Model classes of the rectal cancer cohort grouped against the eight
# colorectal cancer patch classes; the colorectal background class has no
# counterpart, which leaves a six-class problem.
RC_CLASSES = (
    "tumor",
    "stroma",
    "necrosis",
    "muscle",
    "healthy epithelium",
    "fatty tissue",
    "lymphocytes",
    "mucus",
    "blood",
)
CRC_CLASSES = (
    "tumor epithelium",
    "simple stroma",
    "complex stroma",
    "immune cells",
    "debris and mucus",
    "mucosal glands",
    "adipose tissue",
    "background",
)
RC_CRC_GROUPS = (
    ("tumor", ("tumor",), ("tumor epithelium",)),
    ("stroma", ("stroma", "muscle"), ("simple stroma", "complex stroma")),
    ("lymphocytes", ("lymphocytes",), ("immune cells",)),
    ("debris and mucus", ("necrosis", "blood", "mucus"), ("debris and mucus",)),
    ("glands", ("healthy epithelium",), ("mucosal glands",)),
    ("adipose", ("fatty tissue",), ("adipose tissue",)),
)


def rc_to_crc_mapping() -> ClassMapping:
    return ClassMapping.from_names(RC_CRC_GROUPS, RC_CLASSES, CRC_CLASSES, unmatched_truth=("background",))


def group_classes(probabilities, labels, mapping: ClassMapping) -> tuple[np.ndarray, np.ndarray]:
    """Merge model probabilities and truth labels into the grouped classes.

    Grouped probabilities are sums over member classes, renormalized over the
    mapped classes so every row still sums to one. Samples whose truth class
    is unmatched are dropped.

    Returns:
        ``(grouped_probabilities (M, G), grouped_labels (M,))``.
    """
    probs = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if probs.ndim != 2 or probs.shape[0] != labels.size:
        raise LengthMismatch(f"{probs.shape[0] if probs.ndim == 2 else probs.size} predictions for {labels.size} labels")
    for c in range(probs.shape[1]):
        if c not in mapping.prediction_groups and c not in mapping.unmatched_predictions:
            raise UnmappedClass(f"model class {c} is neither mapped nor listed as unmatched")
    for c in np.unique(labels):
        if int(c) not in mapping.truth_groups and int(c) not in mapping.unmatched_truth:
            raise UnmappedClass(f"truth class {int(c)} is neither mapped nor listed as unmatched")
    keep = np.array([int(c) in mapping.truth_groups for c in labels], dtype=bool)
    grouped = np.zeros((int(keep.sum()), len(mapping.groups)))
    kept = probs[keep]
    for c, g in mapping.prediction_groups.items():
        grouped[:, g] += kept[:, c]
    total = grouped.sum(axis=1, keepdims=True)
    np.divide(grouped, total, out=grouped, where=total > 0)
    grouped_labels = np.array([mapping.truth_groups[int(c)] for c in labels[keep]], dtype=np.int64)
    return grouped, grouped_labels
