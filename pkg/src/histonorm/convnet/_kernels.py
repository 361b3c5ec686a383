"""Compiled direct-convolution loops for layers with few channels.

For narrow layers the im2col buffer costs far more memory traffic than the
arithmetic, so these loops win over BLAS. No fastmath: the innermost loops
are elementwise and vectorize without reassociation, which keeps results
bit-reproducible.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def conv_direct(xp, w, out):
    """out[n, o, y, x] = sum_{c,i,j} w[o, c, i, j] * xp[n, c, y + i, x + j]"""
    n, c, _, _ = xp.shape
    co, _, kh, kw = w.shape
    h, wd = out.shape[2], out.shape[3]
    for b in range(n):
        for o in range(co):
            for y in range(h):
                row = out[b, o, y]
                row[:] = 0
                for ci in range(c):
                    for i in range(kh):
                        src = xp[b, ci, y + i]
                        for j in range(kw):
                            wv = w[o, ci, i, j]
                            for x in range(wd):
                                row[x] += wv * src[x + j]


@njit(cache=True)
def conv_weight_grad(xp, dout, dw):
    """dw[o, c, i, j] = sum_{n,y,x} xp[n, c, y + i, x + j] * dout[n, o, y, x]

    Per-tap row accumulators stay in cache while input rows stream once.
    """
    n, c, _, _ = xp.shape
    co, _, kh, kw = dw.shape
    h, wd = dout.shape[2], dout.shape[3]
    acc = np.zeros((co, c, kh, kw, wd), dtype=np.float64)
    for b in range(n):
        for y in range(h):
            for o in range(co):
                d = dout[b, o, y]
                for ci in range(c):
                    for i in range(kh):
                        src = xp[b, ci, y + i]
                        for j in range(kw):
                            a = acc[o, ci, i, j]
                            for x in range(wd):
                                a[x] += src[x + j] * d[x]
    for o in range(co):
        for ci in range(c):
            for i in range(kh):
                for j in range(kw):
                    total = 0.0
                    for x in range(wd):
                        total += acc[o, ci, i, j, x]
                    dw[o, ci, i, j] = total
