# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled im2col / col2im for dilated, strided 2-D convolution.

Column layout is ``(C * kh * kw, B * Ho * Wo)`` with rows ordered
``(channel, ky, kx)`` and columns ordered ``(batch, oy, ox)``.  Accumulation
order in :func:`col2im` is ``(ky, kx)`` ascending for every target element,
which is the same order the numpy fallback uses, so both backends agree
bit-for-bit.
"""
import numpy as np
cimport numpy as cnp
from cython cimport floating

cnp.import_array()


def im2col(floating[:, :, :, ::1] xp, int kh, int kw, int stride, int dilation,
           int out_h, int out_w):
    cdef Py_ssize_t B = xp.shape[0], C = xp.shape[1]
    cdef Py_ssize_t L = out_h * out_w
    dtype = np.float32 if floating is float else np.float64
    cols_arr = np.empty((C * kh * kw, B * L), dtype=dtype)
    cdef floating[:, ::1] cols = cols_arr
    cdef Py_ssize_t c, ky, kx, b, oy, ox, row, col, iy, ix
    for c in range(C):
        for ky in range(kh):
            for kx in range(kw):
                row = (c * kh + ky) * kw + kx
                for b in range(B):
                    col = b * L
                    for oy in range(out_h):
                        iy = oy * stride + ky * dilation
                        ix = kx * dilation
                        for ox in range(out_w):
                            cols[row, col] = xp[b, c, iy, ix]
                            col += 1
                            ix += stride
    return cols_arr


def col2im(floating[:, ::1] cols, int batch, int channels, int height, int width,
           int kh, int kw, int stride, int dilation, int out_h, int out_w):
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros((batch, channels, height, width), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t L = out_h * out_w
    cdef Py_ssize_t c, ky, kx, b, oy, ox, row, col, iy, ix
    for c in range(channels):
        for ky in range(kh):
            for kx in range(kw):
                row = (c * kh + ky) * kw + kx
                for b in range(batch):
                    col = b * L
                    for oy in range(out_h):
                        iy = oy * stride + ky * dilation
                        ix = kx * dilation
                        for ox in range(out_w):
                            out[b, c, iy, ix] += cols[row, col]
                            col += 1
                            ix += stride
    return out_arr
