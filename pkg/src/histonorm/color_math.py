"""RGB <-> optical density conversions (Beer-Lambert).

Images are plain numpy arrays: an RGB image is ``uint8`` with shape
``(height, width, 3)``; an OD image is floating point with the same shape.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import UnreadableImage


@dataclass(frozen=True)
class OpticsConfig:
    """Transmitted-light model.

    Attributes:
        i0: white level of the illuminant, in 8-bit intensity units.
        min_intensity_clamp: intensities below this value are raised to it
            before taking the logarithm, so black pixels have finite OD.
    """

    i0: float = 255.0
    min_intensity_clamp: int = 1

    def __post_init__(self):
        if not (1 <= self.min_intensity_clamp < self.i0 <= 255):
            raise ValueError(
                f"need 1 <= min_intensity_clamp < i0 <= 255, got "
                f"clamp={self.min_intensity_clamp}, i0={self.i0}"
            )

    @property
    def od_ceiling(self) -> float:
        return float(np.log10(self.i0 / self.min_intensity_clamp))


DEFAULT_OPTICS = OpticsConfig()


def check_rgb(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(
            f"expected uint8 array of shape (H, W, 3), got {image.dtype} {image.shape}"
        )
    return image


def od_table(cfg: OpticsConfig = DEFAULT_OPTICS) -> np.ndarray:
    """OD value of each of the 256 possible 8-bit intensities."""
    levels = np.maximum(np.arange(256, dtype=np.float64), cfg.min_intensity_clamp)
    return -np.log10(levels / cfg.i0)


def rgb_to_od(image: np.ndarray, cfg: OpticsConfig = DEFAULT_OPTICS) -> np.ndarray:
    """Per-channel ``-log10(max(I, clamp) / i0)``; returns float64, same shape."""
    image = check_rgb(image)
    # table lookup evaluates the exact same expression for every 8-bit level
    return od_table(cfg)[image]


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def od_to_rgb(od: np.ndarray, cfg: OpticsConfig = DEFAULT_OPTICS) -> np.ndarray:
    """Inverse of :func:`rgb_to_od`: ``round(i0 * 10**-od)`` clamped to [0, 255]."""
    od = np.asarray(od, dtype=np.float64)
    intensity = round_half_away(cfg.i0 * np.power(10.0, -od))
    return np.clip(intensity, 0, 255).astype(np.uint8)


def load_rgb(path: str | os.PathLike) -> np.ndarray:
    """Read an image file as 8-bit RGB; an alpha channel is dropped."""
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode != "RGB":
                im = im.convert("RGB")
            return np.asarray(im, dtype=np.uint8).copy()
    except (OSError, ValueError) as exc:
        raise UnreadableImage(f"{path}: {exc}") from exc


def save_rgb(image: np.ndarray, path: str | os.PathLike) -> None:
    image = check_rgb(image)
    Image.fromarray(image).save(path, format="PNG")
