"""Dense float32 numerics: seeded streams, matmul, convolution, gradient oracle.

Tensors are plain C-contiguous ``numpy.float32`` arrays.  Random streams use
the counter-based Philox-4x64 generator keyed through ``SeedSequence``, so a
given ``(seed, *keys)`` yields the same stream on every platform.
"""
from __future__ import annotations

import numpy as np

from . import kernels

DTYPE = np.float32


class NumericError(ArithmeticError):
    """A computation produced NaN or Inf."""


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Return an independent Philox stream for ``(seed, *keys)``.

    Keys let callers carve out per-purpose streams, e.g.
    ``make_rng(seed, EPOCH, epoch, image_id)`` for one image's augmentation.
    """
    if seed < 0 or any(k < 0 for k in keys):
        raise ValueError("seed and stream keys must be non-negative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *keys])))


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=DTYPE)


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")
    return x


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of a (m, k) and a (k, n) tensor."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return check_finite(a @ b, "matmul result")


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    # Partial windows at the far edge are dropped (floor).
    return (size + 2 * pad - k) // stride + 1


def conv2d_batch(x: np.ndarray, w: np.ndarray, stride: int = 1, pad: int = 0):
    """Cross-correlate a (B, C, H, W) batch with (F, C, kh, kw) kernels.

    Returns ``(out, cols)`` where ``cols`` is the unfolded input kept for the
    backward pass.
    """
    B, C, H, W = x.shape
    F, Ck, kh, kw = w.shape
    if Ck != C:
        raise ValueError(f"conv2d channel mismatch: input {C}, kernels {Ck}")
    if stride < 1 or H + 2 * pad < kh or W + 2 * pad < kw:
        raise ValueError("conv2d kernel does not fit the padded input")
    oh = conv_output_size(H, kh, stride, pad)
    ow = conv_output_size(W, kw, stride, pad)
    cols = kernels.im2col(x, kh, kw, stride, pad)
    out = w.reshape(F, -1) @ cols
    out = out.reshape(F, B, oh, ow).transpose(1, 0, 2, 3)
    return np.ascontiguousarray(out), cols


def conv2d(image: np.ndarray, kernels_: np.ndarray, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Single-image convolution: (C, H, W) with (F, C, kh, kw) -> (F, H', W')."""
    image = as_tensor(image)
    if image.ndim != 3 or kernels_.ndim != 4:
        raise ValueError("conv2d expects a (C, H, W) image and (F, C, kh, kw) kernels")
    out, _ = conv2d_batch(image[None], as_tensor(kernels_), stride, pad)
    return check_finite(out[0], "conv2d result")


def finite_diff_grad(f, x: np.ndarray, eps: float = 1e-3) -> np.ndarray:
    """Central-difference gradient of the scalar function ``f`` at ``x``.

    Evaluation happens in float64 so the oracle is not limited by float32
    rounding of the perturbation.
    """
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value at coordinate {i}")
        g[i] = (fp - fm) / (2 * eps)
    return grad
