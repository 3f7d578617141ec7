# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for the convnet layers.

Every routine here has a numpy twin in ``_kernels_py``; both must produce
bitwise-identical float32 results, so accumulation orders match.
"""
import numpy as np
cimport numpy as cnp
from libc.string cimport memcpy

cnp.import_array()


cdef inline void _valid_range(Py_ssize_t n_out, Py_ssize_t n_in, Py_ssize_t tap, Py_ssize_t stride,
                              Py_ssize_t pad, Py_ssize_t* lo, Py_ssize_t* hi) nogil:
    # Output positions o with 0 <= o * stride + tap - pad < n_in.
    cdef Py_ssize_t first = pad - tap
    lo[0] = 0 if first <= 0 else (first + stride - 1) // stride
    cdef Py_ssize_t last = n_in - 1 + pad - tap
    hi[0] = 0 if last < 0 else min(n_out, last // stride + 1)
    if hi[0] < lo[0]:
        hi[0] = lo[0]


def im2col(const float[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    """Unfold patches into a (C*kh*kw, B*oh*ow) matrix, zero padded."""
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t oh = (H + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (W + 2 * pad - kw) // stride + 1
    out_arr = np.zeros((C * kh * kw, B * oh * ow), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef Py_ssize_t b, c, i, j, oy, ox, row, iy, y_lo, y_hi, x_lo, x_hi
    cdef float* dst
    cdef const float* src
    with nogil:
        for c in range(C):
            for i in range(kh):
                _valid_range(oh, H, i, stride, pad, &y_lo, &y_hi)
                for j in range(kw):
                    _valid_range(ow, W, j, stride, pad, &x_lo, &x_hi)
                    row = (c * kh + i) * kw + j
                    for b in range(B):
                        for oy in range(y_lo, y_hi):
                            iy = oy * stride + i - pad
                            dst = &out[row, (b * oh + oy) * ow]
                            src = &x[b, c, iy, 0]
                            if stride == 1:
                                if x_hi > x_lo:
                                    memcpy(dst + x_lo, src + x_lo + j - pad, (x_hi - x_lo) * sizeof(float))
                            else:
                                for ox in range(x_lo, x_hi):
                                    dst[ox] = src[ox * stride + j - pad]
    return out_arr


def col2im(const float[:, ::1] cols, int B, int C, int H, int W,
           int kh, int kw, int stride, int pad):
    """Fold a (C*kh*kw, B*oh*ow) matrix back onto the input grid, summing overlaps."""
    cdef Py_ssize_t oh = (H + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (W + 2 * pad - kw) // stride + 1
    out_arr = np.zeros((B, C, H, W), dtype=np.float32)
    cdef float[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, c, i, j, y, oy, ox, row, y_lo, y_hi, x_lo, x_hi
    cdef float* dst
    cdef const float* src
    # Kernel taps outermost: every pixel receives its contributions in (i, j)
    # ascending order, as in the sliced accumulation of the fallback.
    with nogil:
        for c in range(C):
            for i in range(kh):
                _valid_range(oh, H, i, stride, pad, &y_lo, &y_hi)
                for j in range(kw):
                    _valid_range(ow, W, j, stride, pad, &x_lo, &x_hi)
                    row = (c * kh + i) * kw + j
                    for b in range(B):
                        for oy in range(y_lo, y_hi):
                            y = oy * stride + i - pad
                            dst = &out[b, c, y, 0]
                            src = &cols[row, (b * oh + oy) * ow]
                            if stride == 1:
                                for ox in range(x_lo, x_hi):
                                    dst[ox + j - pad] += src[ox]
                            else:
                                for ox in range(x_lo, x_hi):
                                    dst[ox * stride + j - pad] += src[ox]
    return out_arr


def maxpool_forward(const float[:, :, :, ::1] x, int k, int stride):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t oh = (H - k) // stride + 1
    cdef Py_ssize_t ow = (W - k) // stride + 1
    out_arr = np.empty((B, C, oh, ow), dtype=np.float32)
    arg_arr = np.empty((B, C, oh, ow), dtype=np.int64)
    cdef float[:, :, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t b, c, oy, ox, i, j, best_idx
    cdef float best, v
    for b in range(B):
        for c in range(C):
            for oy in range(oh):
                for ox in range(ow):
                    best = x[b, c, oy * stride, ox * stride]
                    best_idx = 0
                    for i in range(k):
                        for j in range(k):
                            v = x[b, c, oy * stride + i, ox * stride + j]
                            if v > best:
                                best = v
                                best_idx = i * k + j
                    out[b, c, oy, ox] = best
                    arg[b, c, oy, ox] = best_idx
    return out_arr, arg_arr


def maxpool_backward(const float[:, :, :, ::1] dout, const cnp.int64_t[:, :, :, ::1] arg,
                     int H, int W, int k, int stride):
    cdef Py_ssize_t B = dout.shape[0], C = dout.shape[1]
    cdef Py_ssize_t oh = dout.shape[2], ow = dout.shape[3]
    dx_arr = np.zeros((B, C, H, W), dtype=np.float32)
    cdef float[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t b, c, oy, ox, a, i, j, pos
    # Window position outermost, matching the fallback's accumulation order.
    for pos in range(k * k):
        i = pos // k
        j = pos % k
        for b in range(B):
            for c in range(C):
                for oy in range(oh):
                    for ox in range(ow):
                        if arg[b, c, oy, ox] == pos:
                            dx[b, c, oy * stride + i, ox * stride + j] += dout[b, c, oy, ox]
    return dx_arr
