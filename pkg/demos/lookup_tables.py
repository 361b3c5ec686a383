"""Bake a stain transfer into a 256^3 lookup table and apply it.

Run: python demos/lookup_tables.py [output_dir]
"""

import sys
import time
from pathlib import Path

import numpy as np

from histonorm.lut import apply_lut, bake_lut, read_lut, write_lut
from histonorm.pipeline.synthetic import REFERENCE_BASIS, SHIFTED_BASIS, synthetic_tile
from histonorm.stain_norm import fit_template, transfer_pixels

out_dir = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
out_dir.mkdir(exist_ok=True)

names = ("background", "nuclei", "stroma")
layout = np.array([[1, 2], [2, 1]])
source_tile = synthetic_tile(layout, names, SHIFTED_BASIS, seed=3, noise_sd=2)
source = fit_template(source_tile)
target = fit_template(synthetic_tile(layout, names, REFERENCE_BASIS, seed=4, noise_sd=2))

t0 = time.perf_counter()
lut = bake_lut(source, target)
print(f"baked all 16,777,216 colors in {time.perf_counter() - t0:.1f} s")

path = out_dir / "shifted_to_reference.snl"
write_lut(lut, path)
print(f"{path} is {path.stat().st_size:,} bytes")
lut = read_lut(path)

# A LUT is only an acceleration: its output equals the direct transfer.
big = np.tile(source_tile, (10, 10, 1))
t0 = time.perf_counter()
fast = apply_lut(big, lut)
t_lut = time.perf_counter() - t0
t0 = time.perf_counter()
slow = transfer_pixels(big, source, target)
t_direct = time.perf_counter() - t0
print(f"{big.shape[0]}x{big.shape[1]} tile: LUT {t_lut:.2f} s, direct {t_direct:.2f} s")
print("identical output:", np.array_equal(fast, slow))
