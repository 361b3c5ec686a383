"""Train with and without stain normalization and test both ways.

Run: python demos/normalization_grid.py   (about four minutes)
"""

from histonorm.pipeline.experiment import run_experiment_grid
from histonorm.pipeline.synthetic import stain_shift_benchmark
from histonorm.pipeline.training import TrainConfig

bench = stain_shift_benchmark(seed=0)
print(f"training patches {len(bench.train.labels)}, test patches {len(bench.test.labels)}")
config = TrainConfig(iterations=500, batch_size=36, seed=0, widths=(2, 4, 8, 16, 64, 32))
grid = run_experiment_grid(bench.train, bench.test, bench.template, config)
print(grid.to_text())
print("normalizing both sides (C) beats normalizing neither (A) by", f"{100 * (grid.c - grid.a):.1f} points")
