"""Forward and backward passes of the individual layer types.

Activations are NCHW arrays and kernels are (out, in, kh, kw). Narrow
convolutions run through compiled direct loops; wide ones are lowered to
matrix products (im2col) in chunks that keep the column buffer below
``COL_BUDGET`` elements. Input gradients are computed as a convolution of
the padded upstream gradient with the flipped kernel.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _kernels

COL_BUDGET = 1 << 23
# use the direct loops when in_channels * out_channels is at most this
DIRECT_MAX_CHANNEL_PRODUCT = 256


def pad_amounts(kernel: int, padding: str) -> tuple[int, int]:
    if padding == "valid":
        return 0, 0
    if padding == "same":
        before = (kernel - 1) // 2
        return before, kernel - 1 - before
    raise ValueError(f"unknown padding {padding!r}")


def _pad(x: np.ndarray, before: int, after: int) -> np.ndarray:
    if before == 0 and after == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (before, after), (before, after)))


def _im2col(xp: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(n, c*kh*kw, ho*wo) columns of a padded NCHW block."""
    n, c, h, w = xp.shape
    ho, wo = h - kh + 1, w - kw + 1
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # n, c, ho, wo, kh, kw
    return win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, ho * wo)


def _row_blocks(ho: int, row_cost: int):
    rows = max(1, COL_BUDGET // max(row_cost, 1))
    for r in range(0, ho, rows):
        yield r, min(ho, r + rows)


def _use_direct(w: np.ndarray) -> bool:
    return w.shape[0] * w.shape[1] <= DIRECT_MAX_CHANNEL_PRODUCT and w.shape[2] > 1


def _correlate_valid(xp: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Valid cross-correlation of padded NCHW input with an OIHW kernel."""
    n, c, hp, wp = xp.shape
    co, _, kh, kw = w.shape
    ho, wo = hp - kh + 1, wp - kw + 1
    dtype = np.result_type(xp, w)
    out = np.empty((n, co, ho, wo), dtype=dtype)
    if _use_direct(w):
        _kernels.conv_direct(np.ascontiguousarray(xp, dtype=dtype), np.ascontiguousarray(w, dtype=dtype), out)
        return out
    wmat = w.reshape(co, c * kh * kw)
    for s in range(n):
        for r0, r1 in _row_blocks(ho, wo * c * kh * kw):
            block = xp[s : s + 1, :, r0 : r1 + kh - 1]
            out[s, :, r0:r1] = (wmat @ _im2col(block, kh, kw)[0]).reshape(co, r1 - r0, wo)
    return out


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, padding: str) -> np.ndarray:
    """Cross-correlation of ``x`` (N, Cin, H, W) with ``w`` (Cout, Cin, kh, kw) plus bias."""
    co, cin, kh, kw = w.shape
    if kh == 1 and kw == 1:
        out = np.matmul(w.reshape(co, cin), x.reshape(x.shape[0], cin, -1))
        out = out.reshape(x.shape[0], co, x.shape[2], x.shape[3])
    else:
        out = _correlate_valid(_pad(x, *pad_amounts(kh, padding)), w)
    out += b[None, :, None, None]
    return out


def _weight_grad(xp: np.ndarray, dout: np.ndarray, w: np.ndarray) -> np.ndarray:
    co, c, kh, kw = w.shape
    if _use_direct(w):
        dw = np.empty(w.shape, dtype=np.float64)
        _kernels.conv_weight_grad(np.ascontiguousarray(xp), np.ascontiguousarray(dout), dw)
        return dw.astype(w.dtype)
    n, _, ho, wo = dout.shape
    dwmat = np.zeros((co, c * kh * kw), dtype=w.dtype)
    for s in range(n):
        for r0, r1 in _row_blocks(ho, wo * c * kh * kw):
            block = xp[s : s + 1, :, r0 : r1 + kh - 1]
            d2 = dout[s, :, r0:r1].reshape(co, -1)
            dwmat += d2 @ _im2col(block, kh, kw)[0].T
    return dwmat.reshape(w.shape)


def _input_grad(dout: np.ndarray, w: np.ndarray, before: int, after: int, x_shape) -> np.ndarray:
    co, c, kh, kw = w.shape
    n, _, ho, wo = dout.shape
    h, wd = x_shape[2], x_shape[3]
    # Scattering columns costs ~ output size x in-channels, the transposed
    # convolution ~ input size x out-channels; small output maps (the 9x9
    # valid conv on a patch) favour scattering.
    if 4 * ho * wo * c < h * wd * co:
        dcol = np.matmul(w.reshape(co, c * kh * kw).T, dout.reshape(n, co, ho * wo))
        dcol = dcol.reshape(n, c, kh, kw, ho, wo)
        dxp = np.zeros((n, c, h + before + after, wd + before + after), dtype=dout.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + ho, j : j + wo] += dcol[:, :, i, j]
        return dxp[:, :, before : before + h, before : before + wd]
    wflip = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    dpad = np.pad(dout, ((0, 0), (0, 0), (kh - 1 - before, kh - 1 - after), (kw - 1 - before, kw - 1 - after)))
    return _correlate_valid(dpad, wflip)


def conv2d_backward(
    x: np.ndarray, w: np.ndarray, dout: np.ndarray, padding: str, need_dx: bool = True
):
    """Gradients of a convolution given the upstream gradient ``dout``.

    Returns:
        ``(dx, dw, db)``; ``dx`` is None when ``need_dx`` is False.
    """
    co, cin, kh, kw = w.shape
    n = x.shape[0]
    db = dout.sum(axis=(0, 2, 3))
    if kh == 1 and kw == 1:
        d2 = dout.reshape(n, co, -1)
        x2 = x.reshape(n, cin, -1)
        dw = np.einsum("nop,nip->oi", d2, x2, optimize=True).reshape(w.shape).astype(w.dtype)
        dx = np.matmul(w.reshape(co, cin).T, d2).reshape(x.shape) if need_dx else None
        return dx, dw, db
    before, after = pad_amounts(kh, padding)
    dw = _weight_grad(_pad(x, before, after), dout, w)
    dx = _input_grad(dout, w, before, after, x.shape) if need_dx else None
    return dx, dw, db


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0, out=x)


def relu_backward(out: np.ndarray, dout: np.ndarray) -> np.ndarray:
    return dout * (out > 0)


def maxpool_forward(x: np.ndarray) -> np.ndarray:
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped."""
    ho, wo = x.shape[2] // 2, x.shape[3] // 2
    a = x[:, :, 0 : 2 * ho : 2, 0 : 2 * wo : 2]
    b = x[:, :, 0 : 2 * ho : 2, 1 : 2 * wo : 2]
    c = x[:, :, 1 : 2 * ho : 2, 0 : 2 * wo : 2]
    d = x[:, :, 1 : 2 * ho : 2, 1 : 2 * wo : 2]
    return np.maximum(np.maximum(a, b), np.maximum(c, d))


def maxpool_backward(x: np.ndarray, out: np.ndarray, dout: np.ndarray) -> np.ndarray:
    """Route each gradient to the first maximal input in scan order."""
    ho, wo = out.shape[2:]
    dx = np.zeros_like(x)
    taken = np.zeros(out.shape, dtype=bool)
    for dy, dxo in ((0, 0), (0, 1), (1, 0), (1, 1)):
        sl = (slice(None), slice(None), slice(dy, 2 * ho, 2), slice(dxo, 2 * wo, 2))
        hit = (x[sl] == out) & ~taken
        dx[sl] = dout * hit
        taken |= hit
    return dx


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean of ``-log p[label]`` over the leading axis."""
    probs = np.asarray(probs, dtype=np.float64)
    p = np.take_along_axis(probs, np.asarray(labels)[:, None], axis=-1)[:, 0]
    return float(np.mean(-np.log(p)))
