"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

For float32 input the results are bitwise identical to the compiled versions:
the per-pixel accumulation order is (kernel row, kernel column) ascending in
both.  Other dtypes are preserved, which the float64 gradient checks rely on.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, kh, kw, stride, pad):
    B, C, H, W = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (H + 2 * pad - kh) // stride + 1
    ow = (W + 2 * pad - kw) // stride + 1
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, : oh * stride : stride, : ow * stride : stride]
    # (B, C, oh, ow, kh, kw) -> (C, kh, kw, B, oh, ow)
    cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(C * kh * kw, B * oh * ow)
    return np.ascontiguousarray(cols)


def col2im(cols, B, C, H, W, kh, kw, stride, pad):
    oh = (H + 2 * pad - kh) // stride + 1
    ow = (W + 2 * pad - kw) // stride + 1
    padded = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=cols.dtype)
    c6 = cols.reshape(C, kh, kw, B, oh, ow).transpose(3, 0, 4, 5, 1, 2)
    for i in range(kh):
        for j in range(kw):
            padded[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += c6[..., i, j]
    if pad == 0:
        return padded
    return np.ascontiguousarray(padded[:, :, pad : pad + H, pad : pad + W])


def maxpool_forward(x, k, stride):
    B, C, H, W = x.shape
    oh = (H - k) // stride + 1
    ow = (W - k) // stride + 1
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, : oh * stride : stride, : ow * stride : stride]
    win = win.reshape(B, C, oh, ow, k * k)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg.astype(np.int64)


def maxpool_backward(dout, arg, H, W, k, stride):
    B, C, oh, ow = dout.shape
    dx = np.zeros((B, C, H, W), dtype=dout.dtype)
    for pos in range(k * k):
        i, j = divmod(pos, k)
        mask = arg == pos
        view = dx[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
        view[mask] += dout[mask]
    return dx
