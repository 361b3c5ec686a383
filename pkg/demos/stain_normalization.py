"""Fit a stain template and normalize an image from a differently stained lab.

Run: python demos/stain_normalization.py [output_dir]
"""

import sys
from pathlib import Path

import numpy as np

from histonorm.color_math import save_rgb
from histonorm.pipeline.synthetic import REFERENCE_BASIS, SHIFTED_BASIS, synthetic_tile
from histonorm.stain_norm import angle_between, fit_template, normalize

out_dir = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
out_dir.mkdir(exist_ok=True)

# Two tiles with the same tissue layout, stained in two labs.
layout = np.array([[1, 2, 0], [2, 1, 2]])
reference = synthetic_tile(layout, ("background", "nuclei", "stroma"), REFERENCE_BASIS, seed=1, noise_sd=2)
shifted = synthetic_tile(layout, ("background", "nuclei", "stroma"), SHIFTED_BASIS, seed=2, noise_sd=2)

template = fit_template(reference)
print("template hematoxylin", np.round(template.basis.h_vector, 3))
print("template eosin      ", np.round(template.basis.e_vector, 3))
print("robust max concentrations", np.round(template.max_concentrations, 3))
print(f"hematoxylin recovered within {angle_between(template.basis.h_vector, REFERENCE_BASIS.h_vector):.2f} deg")

normalized = normalize(shifted, template)


def mean_color(image):
    return image.reshape(-1, 3).mean(axis=0)


# The tiles hold different random tissue, so compare their average colors.
print("average RGB of reference ", np.round(mean_color(reference), 1))
print("average RGB of shifted   ", np.round(mean_color(shifted), 1))
print("average RGB of normalized", np.round(mean_color(normalized), 1))
change = np.mean(np.abs(normalize(reference, template).astype(int) - reference.astype(int)))
print(f"self-normalization changes the reference by {change:.2f} levels")

save_rgb(reference, out_dir / "reference.png")
save_rgb(shifted, out_dir / "shifted.png")
save_rgb(normalized, out_dir / "normalized.png")
print("images written to", out_dir)
