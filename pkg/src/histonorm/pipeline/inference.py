"""Dense tile classification and class-map rendering."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..color_math import check_rgb
from ..convnet.network import NetworkParams, NetworkSpec, dense_forward, receptive_field
from ..errors import BadMagic, PaletteTooSmall, TruncatedFile
from .training import to_unit

Normalizer = Callable[[np.ndarray], np.ndarray]

CLM_MAGIC = b"CLM1"

# Distinct colors for up to 12 classes.
DEFAULT_PALETTE = np.array(
    [
        [230, 25, 75],
        [60, 180, 75],
        [255, 225, 25],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [240, 50, 230],
        [210, 245, 60],
        [250, 190, 212],
        [0, 128, 128],
        [170, 110, 40],
    ],
    dtype=np.uint8,
)


@dataclass(frozen=True)
class ClassMap:
    """Dense classification of a tile.

    Cell ``(i, j)`` is the prediction of the network window whose receptive
    field starts at input pixel ``(stride * i + origin, stride * j + origin)``;
    ``origin`` is negative because the early layers zero-pad.
    """

    classes: np.ndarray
    probabilities: np.ndarray
    stride: int = 16
    origin: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.classes.shape


def classify_tile(
    spec: NetworkSpec,
    params: NetworkParams,
    tile: np.ndarray,
    normalizer: Normalizer | None = None,
    block_cells: int = 32,
) -> ClassMap:
    """Optionally stain-normalize ``tile``, then run the network densely over it."""
    check_rgb(tile)
    if normalizer is not None:
        tile = normalizer(tile)
    probs = dense_forward(spec, params, to_unit(tile, params.dtype), block_cells=block_cells)
    stride, left, _ = receptive_field(spec)
    return ClassMap(probs.argmax(axis=-1), probs, stride, -left)


def render_class_map(
    class_map: ClassMap,
    palette: np.ndarray = DEFAULT_PALETTE,
    source: np.ndarray | None = None,
) -> np.ndarray:
    """Paint every cell as a ``stride x stride`` block of its class color.

    With ``source``, the painted map is cropped or edge-extended to the
    source dimensions and blended 50/50 over it.
    """
    palette = np.asarray(palette, dtype=np.uint8)
    k = class_map.probabilities.shape[-1]
    if palette.ndim != 2 or palette.shape[1] != 3 or palette.shape[0] < k:
        raise PaletteTooSmall(f"palette has {palette.shape[0]} colors for {k} classes")
    s = class_map.stride
    painted = np.repeat(np.repeat(palette[class_map.classes], s, axis=0), s, axis=1)
    if source is None:
        return painted
    check_rgb(source)
    h, w = source.shape[:2]
    painted = painted[:h, :w]
    painted = np.pad(painted, ((0, h - painted.shape[0]), (0, w - painted.shape[1]), (0, 0)), mode="edge")
    blend = (painted.astype(np.uint16) + source.astype(np.uint16) + 1) // 2
    return blend.astype(np.uint8)


def probability_dump_bytes(probabilities: np.ndarray) -> bytes:
    """``CLM1`` dump: magic, grid height and width and class count as LE uint32,
    then the probabilities as row-major LE float32."""
    gh, gw, k = probabilities.shape
    return CLM_MAGIC + struct.pack("<3I", gh, gw, k) + np.ascontiguousarray(probabilities, dtype="<f4").tobytes()


def write_probability_dump(probabilities: np.ndarray, path: str | os.PathLike) -> None:
    with open(path, "wb") as f:
        f.write(probability_dump_bytes(probabilities))


def read_probability_dump(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != CLM_MAGIC:
        raise BadMagic(f"{path}: not a probability dump")
    if len(buf) < 16:
        raise TruncatedFile(f"{path}: header truncated")
    gh, gw, k = struct.unpack("<3I", buf[4:16])
    need = 16 + 4 * gh * gw * k
    if len(buf) < need:
        raise TruncatedFile(f"{path}: {len(buf)} bytes, expected {need}")
    return np.frombuffer(buf[16:need], "<f4").reshape(gh, gw, k).astype(np.float32)
