"""Input transforms: fixed Sobel filtering, random crops/flips, central crop."""
from __future__ import annotations

import math

import numpy as np

from .tensor import DTYPE, conv2d_batch

SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=DTYPE)
SOBEL_Y = np.ascontiguousarray(SOBEL_X.T)
_SOBEL_BANK = np.stack([SOBEL_X, SOBEL_Y])[:, None]  # (2, 1, 3, 3)


def sobel_batch(x: np.ndarray) -> np.ndarray:
    """Sobel-filter a (B, C, H, W) batch into (B, 2, H, W) gradient maps.

    Color is removed first by an unweighted mean over channels.  No contrast
    normalization is applied afterwards.
    """
    if x.ndim != 4 or x.shape[1] not in (1, 3):
        raise ValueError(f"sobel transform needs 1 or 3 channels, got shape {x.shape}")
    gray = x.mean(axis=1, keepdims=True, dtype=x.dtype)
    out, _ = conv2d_batch(np.ascontiguousarray(gray), _SOBEL_BANK.astype(x.dtype), stride=1, pad=1)
    return out


def sobel_transform(image: np.ndarray) -> np.ndarray:
    if image.ndim != 3:
        raise ValueError("expected a (C, H, W) image")
    return sobel_batch(np.asarray(image, dtype=DTYPE)[None])[0]


def bilinear_resize(image: np.ndarray, out_hw) -> np.ndarray:
    """Resize (C, H, W) to (C, h, w) with half-pixel-centered bilinear sampling."""
    C, H, W = image.shape
    oh, ow = out_hw

    def axis_weights(src, dst):
        pos = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
        pos = np.clip(pos, 0.0, src - 1)
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, src - 1)
        frac = (pos - lo).astype(DTYPE)
        return lo, hi, frac

    y0, y1, fy = axis_weights(H, oh)
    x0, x1, fx = axis_weights(W, ow)
    rows = image[:, y0, :] * (1 - fy)[None, :, None] + image[:, y1, :] * fy[None, :, None]
    out = rows[:, :, x0] * (1 - fx)[None, None, :] + rows[:, :, x1] * fx[None, None, :]
    return np.ascontiguousarray(out, dtype=DTYPE)


def _crop_box(H, W, rng, scale, ratio, attempts=10):
    area = H * W
    log_ratio = (math.log(ratio[0]), math.log(ratio[1]))
    for _ in range(attempts):
        target = area * rng.uniform(scale[0], scale[1])
        aspect = math.exp(rng.uniform(*log_ratio))
        w = int(round(math.sqrt(target * aspect)))
        h = int(round(math.sqrt(target / aspect)))
        if 0 < w <= W and 0 < h <= H:
            top = int(rng.integers(0, H - h + 1))
            left = int(rng.integers(0, W - w + 1))
            return top, left, h, w
    # Fallback: the largest centered crop whose aspect lies inside ``ratio``.
    in_ratio = W / H
    if in_ratio < ratio[0]:
        w = W
        h = min(H, int(round(w / ratio[0])))
    elif in_ratio > ratio[1]:
        h = H
        w = min(W, int(round(h * ratio[1])))
    else:
        h, w = H, W
    return (H - h) // 2, (W - w) // 2, h, w


def random_resized_crop(image: np.ndarray, rng: np.random.Generator, out, scale=(0.08, 1.0),
                        ratio=(3 / 4, 4 / 3)) -> np.ndarray:
    """Crop a random area fraction / aspect ratio window and resize it to ``out``."""
    if not 0 < scale[0] <= scale[1] <= 1:
        raise ValueError("scale bounds must satisfy 0 < lo <= hi <= 1")
    if not 0 < ratio[0] <= ratio[1]:
        raise ValueError("ratio bounds must be positive and ordered")
    _, H, W = image.shape
    top, left, h, w = _crop_box(H, W, rng, scale, ratio)
    return bilinear_resize(image[:, top : top + h, left : left + w], out)


def horizontal_flip(image: np.ndarray, rng: np.random.Generator, p: float = 0.5) -> np.ndarray:
    if not 0.0 <= p <= 1.0:
        raise ValueError("flip probability must lie in [0, 1]")
    if rng.random() < p:
        return np.ascontiguousarray(image[..., ::-1])
    return image


def central_crop(image: np.ndarray, out) -> np.ndarray:
    """Centered (h, w) window; an odd leftover pixel stays on the bottom/right."""
    h, w = out
    H, W = image.shape[-2:]
    if h > H or w > W or h < 1 or w < 1:
        raise ValueError(f"crop {out} does not fit image {(H, W)}")
    top = (H - h) // 2
    left = (W - w) // 2
    return np.ascontiguousarray(image[..., top : top + h, left : left + w])


def augment(image, rng, out, scale, ratio, flip_p):
    """Training-time view: random resized crop followed by a random flip."""
    return horizontal_flip(random_resized_crop(image, rng, out, scale, ratio), rng, flip_p)
