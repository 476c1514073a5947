"""Numpy fallback for the compiled convolution kernels.

Same layout and accumulation order as ``_ckernels.pyx``.
"""
import numpy as np


def _window(start, count, stride):
    return slice(start, start + stride * (count - 1) + 1, stride)


def im2col(xp, kh, kw, stride, dilation, out_h, out_w):
    B, C = xp.shape[:2]
    xt = xp.transpose(1, 0, 2, 3)
    cols = np.empty((C, kh, kw, B, out_h, out_w), dtype=xp.dtype)
    for ky in range(kh):
        ys = _window(ky * dilation, out_h, stride)
        for kx in range(kw):
            cols[:, ky, kx] = xt[:, :, ys, _window(kx * dilation, out_w, stride)]
    return cols.reshape(C * kh * kw, B * out_h * out_w)


def col2im(cols, batch, channels, height, width, kh, kw, stride, dilation, out_h, out_w):
    out = np.zeros((channels, batch, height, width), dtype=cols.dtype)
    blocks = cols.reshape(channels, kh, kw, batch, out_h, out_w)
    for ky in range(kh):
        ys = _window(ky * dilation, out_h, stride)
        for kx in range(kw):
            out[:, :, ys, _window(kx * dilation, out_w, stride)] += blocks[:, ky, kx]
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3))
