"""Train a small classifier on synthetic tissue, then map a larger tile.

Run: python demos/train_and_classify.py [output_dir]   (about two minutes)
"""

import sys
from pathlib import Path

import numpy as np

from histonorm.color_math import save_rgb
from histonorm.pipeline.evaluation import evaluate
from histonorm.pipeline.inference import classify_tile, render_class_map
from histonorm.pipeline.synthetic import SyntheticConfig, generate_synthetic_dataset, synthetic_tile
from histonorm.pipeline.training import TrainConfig, predict_patches, train

out_dir = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
out_dir.mkdir(exist_ok=True)

data = generate_synthetic_dataset(SyntheticConfig(classes=3, patches_per_class=64, seed=0))
config = TrainConfig(
    iterations=200, batch_size=24, widths=(2, 4, 8, 16, 64, 32), validation_interval=50, validation_per_class=8
)
result = train(data, config, on_log=lambda line: print(line) if "val_acc" in line else None)

test = generate_synthetic_dataset(SyntheticConfig(classes=3, patches_per_class=30, seed=1))
predicted = predict_patches(result.spec, result.params, test.images).argmax(1)
print(evaluate(predicted, test.labels, 3).to_text(test.class_names))

layout = np.array([[0, 1, 1, 2], [2, 2, 1, 0], [1, 0, 2, 2]])
tile = synthetic_tile(layout, tuple(data.class_names), seed=5, noise_sd=2)
class_map = classify_tile(result.spec, result.params, tile)
print("class grid", class_map.shape, "stride", class_map.stride)
save_rgb(tile, out_dir / "tile.png")
save_rgb(render_class_map(class_map, source=tile), out_dir / "class_map.png")
print("tile and overlay written to", out_dir)
