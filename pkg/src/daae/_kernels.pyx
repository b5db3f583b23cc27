# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled im2col / col2im kernels.

Single-pass gather/scatter twins of `daae._kernels_np` with the same
signatures.  These are the memory-bound halves of every conv and
transposed-conv call; the GEMMs stay in BLAS either way.
"""

import numpy as np

cimport cython
cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "compiled"

ctypedef fused floating:
    float
    double


@cython.boundscheck(False)
@cython.wraparound(False)
cdef void _im2col_impl(floating[:, :, :, ::1] x, floating[:, ::1] cols,
                       Py_ssize_t k, Py_ssize_t s, Py_ssize_t p,
                       Py_ssize_t out_h, Py_ssize_t out_w) noexcept nogil:
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t bi, ci, i, j, ki, kj, hi, wj, row, col
    for bi in range(b):
        for i in range(out_h):
            for j in range(out_w):
                row = (bi * out_h + i) * out_w + j
                for ci in range(c):
                    for ki in range(k):
                        hi = i * s + ki - p
                        for kj in range(k):
                            wj = j * s + kj - p
                            col = (ci * k + ki) * k + kj
                            if 0 <= hi < h and 0 <= wj < w:
                                cols[row, col] = x[bi, ci, hi, wj]
                            else:
                                cols[row, col] = 0.0


@cython.boundscheck(False)
@cython.wraparound(False)
cdef void _col2im_impl(floating[:, ::1] cols, floating[:, :, :, ::1] out,
                       Py_ssize_t k, Py_ssize_t s, Py_ssize_t p,
                       Py_ssize_t out_h, Py_ssize_t out_w) noexcept nogil:
    cdef Py_ssize_t b = out.shape[0], c = out.shape[1], h = out.shape[2], w = out.shape[3]
    cdef Py_ssize_t bi, ci, i, j, ki, kj, hi, wj, row, col
    for bi in range(b):
        for i in range(out_h):
            for j in range(out_w):
                row = (bi * out_h + i) * out_w + j
                for ci in range(c):
                    for ki in range(k):
                        hi = i * s + ki - p
                        if hi < 0 or hi >= h:
                            continue
                        for kj in range(k):
                            wj = j * s + kj - p
                            if 0 <= wj < w:
                                col = (ci * k + ki) * k + kj
                                out[bi, ci, hi, wj] += cols[row, col]


def im2col(x, kernel_size, stride, padding, out_h, out_w):
    """Gather sliding windows of ``x`` [B,C,H,W] into ``[B*out_h*out_w, C*k*k]``."""
    x = np.ascontiguousarray(x)
    b, c = x.shape[0], x.shape[1]
    cols = np.empty((b * out_h * out_w, c * kernel_size * kernel_size), dtype=x.dtype)
    if x.dtype == np.float32:
        _im2col_impl[float](x, cols, kernel_size, stride, padding, out_h, out_w)
    elif x.dtype == np.float64:
        _im2col_impl[double](x, cols, kernel_size, stride, padding, out_h, out_w)
    else:
        raise TypeError(f"unsupported dtype {x.dtype}")
    return cols


def col2im(cols, batch, channels, height, width, kernel_size, stride, padding, out_h, out_w):
    """Scatter-add ``cols`` [B*out_h*out_w, C*k*k] back into an image [B,C,H,W]."""
    cols = np.ascontiguousarray(cols)
    out = np.zeros((batch, channels, height, width), dtype=cols.dtype)
    if cols.dtype == np.float32:
        _col2im_impl[float](cols, out, kernel_size, stride, padding, out_h, out_w)
    elif cols.dtype == np.float64:
        _col2im_impl[double](cols, out, kernel_size, stride, padding, out_h, out_w)
    else:
        raise TypeError(f"unsupported dtype {cols.dtype}")
    return out
