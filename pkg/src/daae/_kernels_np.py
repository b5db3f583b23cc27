"""Pure-numpy im2col / col2im kernels.

Fallback twin of the compiled ``daae._kernels`` extension.  Both expose
the same two functions; `daae.backend` picks one at import time.  im2col
matches the extension bit-exactly, col2im up to float summation order.

Layout convention: ``cols`` is ``[B*L, C*k*k]`` where ``L = out_h*out_w``
and the column index is ``c*k*k + ki*k + kj``.  Rows are ordered
``b*L + i*out_w + j``.  This is the GEMM-friendly layout: a convolution
forward is a single ``cols @ w.reshape(O, -1).T``.
"""

import numpy as np

BACKEND_NAME = "numpy"


def im2col(x, kernel_size, stride, padding, out_h, out_w):
    """Gather sliding windows of ``x`` [B,C,H,W] into ``[B*out_h*out_w, C*k*k]``."""
    b, c, h, w = x.shape
    k, s, p = kernel_size, stride, padding
    xp = x
    if p > 0:
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    # windows[b, c, ki, kj, i, j] = xp[b, c, i*s + ki, j*s + kj]
    windows = np.empty((b, c, k, k, out_h, out_w), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            windows[:, :, ki, kj] = xp[:, :, ki : ki + s * out_h : s, kj : kj + s * out_w : s]
    return np.ascontiguousarray(windows.transpose(0, 4, 5, 1, 2, 3)).reshape(
        b * out_h * out_w, c * k * k
    )


def col2im(cols, batch, channels, height, width, kernel_size, stride, padding, out_h, out_w):
    """Scatter-add ``cols`` [B*out_h*out_w, C*k*k] back into an image [B,C,H,W].

    Exact adjoint of :func:`im2col`: overlapping windows accumulate.
    """
    b, c, h, w = batch, channels, height, width
    k, s, p = kernel_size, stride, padding
    windows = np.ascontiguousarray(
        cols.reshape(b, out_h, out_w, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    )
    xp = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=cols.dtype)
    for ki in range(k):
        for kj in range(k):
            xp[:, :, ki : ki + s * out_h : s, kj : kj + s * out_w : s] += windows[:, :, ki, kj]
    if p > 0:
        return np.ascontiguousarray(xp[:, :, p : p + h, p : p + w])
    return xp
