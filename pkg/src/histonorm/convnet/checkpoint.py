"""Binary checkpoint files.

Layout: ``b"CNV1"``, a version byte, the class count as little-endian
uint32, then for every weight layer its kernel dims (out, in, kh, kw) as four
LE uint32 followed by the kernel and the bias as LE float32.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from ..errors import BadMagic, BadVersion, ShapeMismatch, TruncatedFile
from .network import NetworkParams, NetworkSpec, canonical_spec

MAGIC = b"CNV1"
VERSION = 1


def checkpoint_bytes(spec: NetworkSpec, params: NetworkParams) -> bytes:
    parts = [MAGIC, bytes([VERSION]), struct.pack("<I", spec.num_classes)]
    for k, b in zip(params.kernels, params.biases):
        parts.append(struct.pack("<4I", *k.shape))
        parts.append(np.ascontiguousarray(k, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(spec: NetworkSpec, params: NetworkParams, path: str | os.PathLike) -> None:
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(spec, params))


def _take(buf: bytes, pos: int, n: int, what: str) -> bytes:
    if pos + n > len(buf):
        raise TruncatedFile(f"checkpoint ends inside {what} (need {pos + n} bytes, have {len(buf)})")
    return buf[pos : pos + n]


def parse_checkpoint(buf: bytes) -> tuple[NetworkSpec, NetworkParams]:
    if _take(buf, 0, 4, "header") != MAGIC:
        raise BadMagic(f"not a checkpoint: magic {buf[:4]!r}")
    version = _take(buf, 4, 1, "header")[0]
    if version != VERSION:
        raise BadVersion(f"unsupported checkpoint version {version}")
    (num_classes,) = struct.unpack("<I", _take(buf, 5, 4, "header"))
    pos = 9
    kernels, biases = [], []
    for layer in range(7):
        dims = struct.unpack("<4I", _take(buf, pos, 16, f"layer {layer} dims"))
        pos += 16
        count = int(np.prod(dims))
        kernels.append(np.frombuffer(_take(buf, pos, 4 * count, f"layer {layer} kernel"), "<f4").reshape(dims).astype(np.float32))
        pos += 4 * count
        biases.append(np.frombuffer(_take(buf, pos, 4 * dims[0], f"layer {layer} bias"), "<f4").astype(np.float32))
        pos += 4 * dims[0]
    if pos != len(buf):
        raise ShapeMismatch(f"{len(buf) - pos} trailing bytes after the last layer")
    widths = tuple(k.shape[0] for k in kernels[:-1])
    try:
        spec = canonical_spec(num_classes, widths)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc
    for k, shape in zip(kernels, spec.kernel_shapes()):
        if k.shape != shape:
            raise ShapeMismatch(f"kernel dims {k.shape} do not match the architecture (expected {shape})")
    return spec, NetworkParams(kernels, biases)


def load_checkpoint(path: str | os.PathLike) -> tuple[NetworkSpec, NetworkParams]:
    with open(path, "rb") as f:
        return parse_checkpoint(f.read())
