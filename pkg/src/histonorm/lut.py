"""Exhaustive 256^3 RGB look-up tables.

Any fixed pixel-wise color transform can be baked into a :class:`Lut` and
then applied with a single gather per pixel. The on-disk ``SNL1`` format is
the 4-byte magic ``b"SNL1"``, a version byte ``0x01``, then the 256^3 output
triples in index order ``(r * 256 + g) * 256 + b``.
"""

from __future__ import annotations

import os
from typing import Callable

import numpy as np
from numba import njit

from .color_math import check_rgb
from .errors import BadMagic, BadVersion, TruncatedFile
from .stain_norm import TemplateParams, transfer_pixels

LUT_MAGIC = b"SNL1"
LUT_VERSION = 1
LUT_SIZE = 256**3
LUT_FILE_BYTES = len(LUT_MAGIC) + 1 + 3 * LUT_SIZE


class Lut:
    """RGB -> RGB table with ``LUT_SIZE`` entries; immutable once built."""

    __slots__ = ("entries", "_packed")

    def __init__(self, entries: np.ndarray):
        entries = np.ascontiguousarray(entries, dtype=np.uint8)
        if entries.shape != (LUT_SIZE, 3):
            raise ValueError(f"LUT must have shape ({LUT_SIZE}, 3), got {entries.shape}")
        entries.setflags(write=False)
        self.entries = entries
        # one 4-byte word per entry (r | g << 8 | b << 16): one load per pixel
        packed = entries[:, 0].astype(np.uint32)
        packed |= entries[:, 1].astype(np.uint32) << 8
        packed |= entries[:, 2].astype(np.uint32) << 16
        self._packed = packed

    def __eq__(self, other):
        if not isinstance(other, Lut):
            return NotImplemented
        return np.array_equal(self.entries, other.entries)

    __hash__ = None


def all_rgb_values(r_start: int = 0, r_stop: int = 256) -> np.ndarray:
    """Every RGB triple with red in ``[r_start, r_stop)``, in LUT index order."""
    idx = np.arange(r_start * 65536, r_stop * 65536, dtype=np.uint32)
    out = np.empty((idx.size, 3), dtype=np.uint8)
    out[:, 0] = idx >> 16
    out[:, 1] = (idx >> 8) & 0xFF
    out[:, 2] = idx & 0xFF
    return out


def bake_function(fn: Callable[[np.ndarray], np.ndarray], reds_per_chunk: int = 16) -> Lut:
    """Evaluate ``fn`` on all 256^3 colors.

    ``fn`` receives a ``uint8`` array of shape ``(n, 3)`` and must return one
    of the same shape.
    """
    entries = np.empty((LUT_SIZE, 3), dtype=np.uint8)
    for r0 in range(0, 256, reds_per_chunk):
        r1 = min(256, r0 + reds_per_chunk)
        values = all_rgb_values(r0, r1)
        result = np.asarray(fn(values))
        if result.shape != values.shape:
            raise ValueError(f"pixel function returned shape {result.shape}, expected {values.shape}")
        entries[r0 * 65536 : r1 * 65536] = result
    return Lut(entries)


def bake_lut(source_template: TemplateParams, target_template: TemplateParams) -> Lut:
    """Bake the pixel-wise stain transfer ``source -> target``."""
    return bake_function(lambda px: transfer_pixels(px, source_template, target_template))


def identity_lut() -> Lut:
    return bake_function(lambda px: px)


def lut_index(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    r = image[..., 0].astype(np.uint32)
    g = image[..., 1].astype(np.uint32)
    b = image[..., 2].astype(np.uint32)
    return (r << 16) | (g << 8) | b


@njit(cache=True)
def _gather(flat, packed, out):
    for i in range(flat.shape[0]):
        w = packed[(np.uint32(flat[i, 0]) << 16) | (np.uint32(flat[i, 1]) << 8) | np.uint32(flat[i, 2])]
        out[i, 0] = w & 0xFF
        out[i, 1] = (w >> 8) & 0xFF
        out[i, 2] = (w >> 16) & 0xFF


def apply_lut(image: np.ndarray, lut: Lut) -> np.ndarray:
    """Replace every pixel by its table entry (one fused index-and-gather pass)."""
    image = check_rgb(image)
    flat = np.ascontiguousarray(image).reshape(-1, 3)
    out = np.empty_like(flat)
    _gather(flat, lut._packed, out)
    return out.reshape(image.shape)


def write_lut(lut: Lut, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(LUT_MAGIC)
        fh.write(bytes([LUT_VERSION]))
        fh.write(lut.entries.tobytes())


def read_lut(path: str | os.PathLike) -> Lut:
    with open(path, "rb") as fh:
        header = fh.read(5)
        if len(header) < 4 or header[:4] != LUT_MAGIC:
            raise BadMagic(f"{path}: not an SNL1 file")
        if len(header) < 5:
            raise TruncatedFile(f"{path}: missing version byte")
        if header[4] != LUT_VERSION:
            raise BadVersion(f"{path}: unsupported SNL1 version {header[4]}")
        payload = fh.read(3 * LUT_SIZE)
        if len(payload) < 3 * LUT_SIZE:
            raise TruncatedFile(f"{path}: {len(payload)} of {3 * LUT_SIZE} payload bytes")
    return Lut(np.frombuffer(payload, dtype=np.uint8).reshape(LUT_SIZE, 3))
