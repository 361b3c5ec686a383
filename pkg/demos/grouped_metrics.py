"""Per-class metrics and evaluation of a 9-class model on an 8-class test set.

Run: python demos/grouped_metrics.py
"""

import numpy as np

from histonorm.pipeline.evaluation import (
    CRC_CLASSES,
    RC_CLASSES,
    RC_CRC_GROUPS,
    evaluate,
    group_classes,
    rc_to_crc_mapping,
)

rng = np.random.default_rng(0)
mapping = rc_to_crc_mapping()
print("groups:")
for name, model, truth in RC_CRC_GROUPS:
    print(f"  {name}: model {list(model)} <-> test {list(truth)}")

# Fake model output: mostly right, with some confusion.
truth = rng.integers(0, len(CRC_CLASSES), 400)
logits = rng.normal(size=(400, len(RC_CLASSES)))
first_member = {}
for cls, group in sorted(mapping.prediction_groups.items(), reverse=True):
    first_member[group] = cls
for i, label in enumerate(truth):
    if label in mapping.truth_groups:
        logits[i, first_member[mapping.truth_groups[label]]] += 2.5
probs = np.exp(logits) / np.exp(logits).sum(1, keepdims=True)

grouped_probs, grouped_truth = group_classes(probs, truth, mapping)
print(f"{len(truth) - len(grouped_truth)} background samples have no counterpart and are dropped")
metrics = evaluate(grouped_probs.argmax(1), grouped_truth, len(mapping.groups))
print(metrics.to_text(list(mapping.groups)))
