"""Inspect the fully convolutional classifier: layers, parameters and grid sizes.

Run: python demos/network_shapes.py
"""

import numpy as np

from histonorm.convnet.network import build_network, dense_forward, forward, output_size, receptive_field

spec, params = build_network(num_classes=9, seed=0)
for layer in spec.layers:
    print(layer)
print(f"{params.num_parameters:,} parameters")

stride, left, right = receptive_field(spec)
print(f"stride {stride}, receptive field {left + right + 1} pixels")
for size in (150, 166, 1000, 5000):
    print(f"{size}x{size} input -> {output_size(spec, size)}x{output_size(spec, size)} grid")

# One 150x150 patch gives one probability vector.
patch = np.random.default_rng(0).random((1, 150, 150, 3), dtype=np.float32)
probs = forward(spec, params, patch)
print("patch output", probs.shape, "sum", float(probs.sum()))

# A larger image is classified densely, in memory-bounded blocks.
small_spec, small_params = build_network(num_classes=3, seed=0, widths=(4, 8, 8, 16, 32, 16))
tile = np.random.default_rng(1).random((400, 400, 3), dtype=np.float32)
grid = dense_forward(small_spec, small_params, tile, block_cells=4)
whole = forward(small_spec, small_params, tile[None])[0]
print("dense grid", grid.shape, "max difference to whole-image forward", float(np.abs(grid - whole).max()))
