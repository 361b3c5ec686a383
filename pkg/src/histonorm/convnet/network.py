"""The fully convolutional patch classifier.

Canonical architecture (VGG-style naming, ReLU after every hidden conv)::

    conv5-32  MP  conv5-64  MP  conv3-128  MP  conv3-256  MP
    conv9-1024  conv1-512  conv1-K  softmax

The first four convolutions use 'same' padding, the rest 'valid'; pooling is
2x2 with stride 2 and floor semantics, so a 150x150 patch reduces to a 9x9
map that the 9x9 convolution turns into a single K-vector. Larger inputs give
a dense grid of class probabilities with a stride of 16 input pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import InputTooSmall, InvalidClassCount
from . import layers

MIN_INPUT = 150
CANONICAL_WIDTHS = (32, 64, 128, 256, 1024, 512)


@dataclass(frozen=True)
class Conv:
    kernel: int
    out_channels: int
    padding: str
    relu: bool = True


@dataclass(frozen=True)
class MaxPool:
    size: int = 2


@dataclass(frozen=True)
class Softmax:
    pass


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    num_classes: int
    input_channels: int = 3

    @property
    def conv_layers(self) -> list[Conv]:
        return [l for l in self.layers if isinstance(l, Conv)]

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(l.out_channels for l in self.conv_layers[:-1])

    def kernel_shapes(self) -> list[tuple[int, int, int, int]]:
        """(out, in, kh, kw) of every weight layer."""
        shapes, cin = [], self.input_channels
        for conv in self.conv_layers:
            shapes.append((conv.out_channels, cin, conv.kernel, conv.kernel))
            cin = conv.out_channels
        return shapes


def canonical_spec(num_classes: int, widths=CANONICAL_WIDTHS) -> NetworkSpec:
    """The canonical layer table; ``widths`` overrides the six hidden widths."""
    if num_classes < 2:
        raise InvalidClassCount(f"need at least 2 classes, got {num_classes}")
    w = tuple(int(v) for v in widths)
    if len(w) != 6 or min(w) < 1:
        raise ValueError(f"need six positive hidden widths, got {widths}")
    return NetworkSpec(
        layers=(
            Conv(5, w[0], "same"),
            MaxPool(),
            Conv(5, w[1], "same"),
            MaxPool(),
            Conv(3, w[2], "same"),
            MaxPool(),
            Conv(3, w[3], "same"),
            MaxPool(),
            Conv(9, w[4], "valid"),
            Conv(1, w[5], "valid"),
            Conv(1, num_classes, "valid", relu=False),
            Softmax(),
        ),
        num_classes=num_classes,
    )


@dataclass
class NetworkParams:
    """One (kernel, bias) pair per weight layer; kernels are (out, in, kh, kw)."""

    kernels: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        return [a for pair in zip(self.kernels, self.biases) for a in pair]

    @property
    def num_parameters(self) -> int:
        return sum(a.size for a in self.arrays())

    @property
    def dtype(self):
        return self.kernels[0].dtype

    def copy(self) -> "NetworkParams":
        return NetworkParams([k.copy() for k in self.kernels], [b.copy() for b in self.biases])

    def astype(self, dtype) -> "NetworkParams":
        return NetworkParams([k.astype(dtype) for k in self.kernels], [b.astype(dtype) for b in self.biases])

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams([np.zeros_like(k) for k in self.kernels], [np.zeros_like(b) for b in self.biases])

    def equals(self, other: "NetworkParams") -> bool:
        a, b = self.arrays(), other.arrays()
        return len(a) == len(b) and all(x.dtype == y.dtype and np.array_equal(x, y) for x, y in zip(a, b))


def init_params(spec: NetworkSpec, seed: int, dtype=np.float32) -> NetworkParams:
    """He-normal kernels (variance 2 / fan-in) and zero biases."""
    rng = np.random.default_rng(seed)
    kernels, biases = [], []
    for shape in spec.kernel_shapes():
        fan_in = shape[1] * shape[2] * shape[3]
        kernels.append((rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype))
        biases.append(np.zeros(shape[0], dtype=dtype))
    return NetworkParams(kernels, biases)


def build_network(
    num_classes: int, seed: int = 0, widths=CANONICAL_WIDTHS, dtype=np.float32
) -> tuple[NetworkSpec, NetworkParams]:
    spec = canonical_spec(num_classes, widths)
    return spec, init_params(spec, seed, dtype)


def output_size(spec: NetworkSpec, size: int) -> int:
    """Grid length along one axis for an input of ``size`` pixels."""
    for layer in spec.layers:
        if isinstance(layer, Conv) and layer.padding == "valid":
            size -= layer.kernel - 1
        elif isinstance(layer, MaxPool):
            size //= layer.size
    return size


def receptive_field(spec: NetworkSpec) -> tuple[int, int, int]:
    """``(stride, left, right)``: grid cell ``i`` sees input rows
    ``stride*i - left`` to ``stride*i + right`` inclusive (zero padding included)."""
    stride, lo, hi = 1, 0, 0
    for layer in reversed(spec.layers):
        if isinstance(layer, Conv):
            before, after = layers.pad_amounts(layer.kernel, layer.padding)
            lo -= before
            hi += layer.kernel - 1 - before
        elif isinstance(layer, MaxPool):
            stride *= layer.size
            lo *= layer.size
            hi = hi * layer.size + layer.size - 1
    return stride, -lo, hi


def _as_batch(x: np.ndarray, dtype) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4:
        raise ValueError(f"expected (N, H, W, C) or (H, W, C) input, got shape {x.shape}")
    if x.shape[1] < MIN_INPUT or x.shape[2] < MIN_INPUT:
        raise InputTooSmall(f"input {x.shape[1]}x{x.shape[2]} is smaller than {MIN_INPUT}x{MIN_INPUT}")
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2), dtype=dtype)


def _forward(spec: NetworkSpec, params: NetworkParams, x: np.ndarray, keep: bool):
    """Returns logits and, with ``keep``, the per-layer inputs/outputs for backprop."""
    tape = []
    wi = 0
    for layer in spec.layers:
        if isinstance(layer, Conv):
            k, b = params.kernels[wi], params.biases[wi]
            out = layers.conv2d_forward(x, k, b, layer.padding)
            if layer.relu:
                layers.relu_forward(out)
            if keep:
                tape.append((layer, wi, x, out))
            wi += 1
            x = out
        elif isinstance(layer, MaxPool):
            out = layers.maxpool_forward(x)
            if keep:
                tape.append((layer, None, x, out))
            x = out
    return x, tape


def forward(spec: NetworkSpec, params: NetworkParams, inputs: np.ndarray) -> np.ndarray:
    """Class probabilities for every grid cell.

    Args:
        inputs: ``(H, W, 3)`` or ``(N, H, W, 3)`` values in [0, 1].

    Returns:
        ``(N, gh, gw, num_classes)`` probabilities; a 150x150 input gives a
        1x1 grid.
    """
    x = _as_batch(inputs, params.dtype)
    logits, _ = _forward(spec, params, x, keep=False)
    return layers.softmax(logits.transpose(0, 2, 3, 1))


def loss_and_gradient(
    spec: NetworkSpec, params: NetworkParams, batch: np.ndarray, labels: np.ndarray
) -> tuple[float, NetworkParams]:
    """Mean categorical cross-entropy and its gradient.

    Every grid cell of sample ``n`` is scored against ``labels[n]``; for
    150x150 patches that is the single output vector.
    """
    x = _as_batch(batch, params.dtype)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (x.shape[0],):
        raise ValueError("one label per sample required")
    logits, tape = _forward(spec, params, x, keep=True)
    n, k, gh, gw = logits.shape
    logp = layers.log_softmax(logits.astype(np.float64), axis=1)
    onehot = np.zeros_like(logp)
    onehot[np.arange(n), labels] = 1.0
    cells = n * gh * gw
    loss = float(-(logp * onehot).sum() / cells)
    # softmax and cross-entropy fused: d loss / d logits = p - onehot
    grad = ((np.exp(logp) - onehot) / cells).astype(params.dtype)

    dk = [None] * len(params.kernels)
    db = [None] * len(params.biases)
    for layer, wi, xin, out in reversed(tape):
        if isinstance(layer, Conv):
            if layer.relu:
                grad = layers.relu_backward(out, grad)
            grad, dk[wi], db[wi] = layers.conv2d_backward(
                xin, params.kernels[wi], grad, layer.padding, need_dx=wi > 0
            )
        else:
            grad = layers.maxpool_backward(xin, out, grad)
    return loss, NetworkParams(dk, db)


def dense_forward(
    spec: NetworkSpec, params: NetworkParams, image: np.ndarray, block_cells: int = 32
) -> np.ndarray:
    """Dense class probabilities of one large image, computed in overlapping blocks.

    Each block of output cells is computed from an input window wide enough to
    contain the full receptive field of its cells, starting on a multiple of
    the network stride, so the result matches :func:`forward` on the whole
    image up to float rounding while memory stays bounded.

    Returns:
        ``(gh, gw, num_classes)`` probabilities.
    """
    x = np.asarray(image)
    if x.ndim == 4 and x.shape[0] == 1:
        x = x[0]
    if x.ndim != 3:
        raise ValueError(f"expected one (H, W, C) image, got shape {x.shape}")
    h, w = x.shape[:2]
    if h < MIN_INPUT or w < MIN_INPUT:
        raise InputTooSmall(f"input {h}x{w} is smaller than {MIN_INPUT}x{MIN_INPUT}")
    gh, gw = output_size(spec, h), output_size(spec, w)
    stride, left, right = receptive_field(spec)
    margin = -(-left // stride)
    out = np.empty((gh, gw, spec.num_classes), dtype=params.dtype)
    for r0 in range(0, gh, block_cells):
        r1 = min(gh, r0 + block_cells)
        y0 = max(0, stride * (r0 - margin))
        y1 = min(h, stride * (r1 - 1) + right + 1)
        for c0 in range(0, gw, block_cells):
            c1 = min(gw, c0 + block_cells)
            x0 = max(0, stride * (c0 - margin))
            x1 = min(w, stride * (c1 - 1) + right + 1)
            probs = forward(spec, params, x[y0:y1, x0:x1])[0]
            oy, ox = r0 - y0 // stride, c0 - x0 // stride
            out[r0:r1, c0:c1] = probs[oy : oy + r1 - r0, ox : ox + c1 - c0]
    return out
