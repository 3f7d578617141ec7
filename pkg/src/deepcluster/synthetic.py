"""Procedural datasets for desk-scale runs: stroke-rendered digits and blob images."""
from __future__ import annotations

import numpy as np

from .dataio import Dataset
from .tensor import DTYPE


def _arc(cx, cy, rx, ry, a0, a1, n=12):
    t = np.radians(np.linspace(a0, a1, n))
    return np.stack([cx + rx * np.cos(t), cy + ry * np.sin(t)], axis=1)


def _line(*pts):
    return np.asarray(pts, dtype=float)


# Strokes in a unit box, x to the right and y downwards.
DIGIT_STROKES = {
    0: [_arc(0.5, 0.5, 0.32, 0.45, 0, 360, 24)],
    1: [_line((0.35, 0.22), (0.55, 0.05), (0.55, 0.95))],
    2: [np.concatenate([_arc(0.5, 0.3, 0.3, 0.25, 200, 370), _line((0.78, 0.4), (0.2, 0.95), (0.82, 0.95))])],
    3: [_arc(0.48, 0.28, 0.28, 0.23, 210, 450), _arc(0.48, 0.72, 0.32, 0.24, 270, 510)],
    4: [_line((0.65, 0.95), (0.65, 0.05), (0.15, 0.68), (0.85, 0.68))],
    5: [np.concatenate([_line((0.8, 0.05), (0.28, 0.05), (0.24, 0.45)), _arc(0.48, 0.67, 0.32, 0.28, 235, 500)])],
    6: [np.concatenate([_arc(0.62, 0.4, 0.4, 0.4, 250, 180, 8), _arc(0.5, 0.7, 0.28, 0.25, 180, 540)])],
    7: [_line((0.15, 0.05), (0.85, 0.05), (0.4, 0.95))],
    8: [_arc(0.5, 0.27, 0.24, 0.22, 0, 360, 20), _arc(0.5, 0.72, 0.3, 0.23, 0, 360, 20)],
    9: [np.concatenate([_arc(0.5, 0.32, 0.28, 0.26, 0, 360, 20), _line((0.78, 0.32), (0.7, 0.95))])],
}


def _segment_distance(px, py, a, b):
    d = b - a
    denom = max(float(d @ d), 1e-12)
    t = np.clip(((px - a[0]) * d[0] + (py - a[1]) * d[1]) / denom, 0.0, 1.0)
    return np.hypot(px - (a[0] + t * d[0]), py - (a[1] + t * d[1]))


EASY = {"rotation": 12, "scale": (0.85, 1.1), "shift": 2.0, "width": (1.0, 2.0), "jitter": 0.4,
        "noise": 0.03, "clutter": 0}
HARD = {"rotation": 30, "scale": (0.6, 1.15), "shift": 4.0, "width": (0.6, 2.4), "jitter": 0.8,
        "noise": 0.15, "clutter": 2}


def _draw_segments(dist, px, py, pts):
    for a, b in zip(pts[:-1], pts[1:]):
        dist = np.minimum(dist, _segment_distance(px, py, a, b))
    return dist


def render_digit(digit: int, rng: np.random.Generator, size: int = 28, style=None) -> np.ndarray:
    """One anti-aliased digit under a random affine map, stroke width and noise.

    ``style`` (default ``HARD``) bounds the distortions; ``clutter`` adds
    that many random distractor strokes.
    """
    st = HARD if style is None else style
    angle = np.radians(rng.uniform(-st["rotation"], st["rotation"]))
    shear = rng.uniform(-0.25, 0.25)
    scale = rng.uniform(*st["scale"])
    sx = size * 0.55 * scale * rng.uniform(0.9, 1.1)
    sy = size * 0.7 * scale
    cx = size / 2 + rng.uniform(-st["shift"], st["shift"])
    cy = size / 2 + rng.uniform(-st["shift"], st["shift"])
    width = rng.uniform(*st["width"])
    rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    affine = rot @ np.array([[sx, shear * sx], [0.0, sy]])
    py, px = np.mgrid[0:size, 0:size].astype(float) + 0.5
    dist = np.full((size, size), np.inf)
    for stroke in DIGIT_STROKES[digit]:
        pts = (stroke - 0.5) @ affine.T + np.array([cx, cy])
        dist = _draw_segments(dist, px, py, pts + rng.normal(0, st["jitter"], pts.shape))
    img = np.clip(width - dist + 0.5, 0.0, 1.0)
    for _ in range(int(rng.integers(0, st["clutter"] + 1))):
        a = rng.uniform(0, size, 2)
        b = a + rng.normal(0, size / 4, 2)
        d = _draw_segments(np.full((size, size), np.inf), px, py, np.stack([a, b]))
        img = np.maximum(img, np.clip(rng.uniform(0.6, 1.4) - d, 0.0, 1.0) * rng.uniform(0.4, 1.0))
    img = np.clip(img + rng.normal(0, st["noise"], img.shape), 0.0, 1.0)
    return img.astype(DTYPE)


def make_digits(n: int = 5000, seed: int = 0, size: int = 28, style=None) -> Dataset:
    """Balanced 10-class digit images ``(n, 1, size, size)`` with labels."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 10
    rng.shuffle(labels)
    images = np.stack([render_digit(int(d), rng, size, style) for d in labels])[:, None]
    return Dataset(images, labels)


def make_blob_images(n: int = 1000, seed: int = 0, size: int = 16) -> Dataset:
    """Two classes of elongated Gaussian blobs: horizontal (0) or vertical (1).

    Position and blob length vary freely, so only the orientation separates
    the classes; a network that ignores position has to learn it.
    """
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    rng.shuffle(labels)
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    images = np.empty((n, 1, size, size), dtype=DTYPE)
    for i, lab in enumerate(labels):
        cy, cx = rng.uniform(size * 0.25, size * 0.75, 2)
        long_, short = size * rng.uniform(0.15, 0.25), size * rng.uniform(0.05, 0.08)
        sy, sx = (short, long_) if lab == 0 else (long_, short)
        spot = np.exp(-((yy - cy) ** 2 / (2 * sy * sy) + (xx - cx) ** 2 / (2 * sx * sx)))
        images[i, 0] = np.clip(spot + rng.normal(0, 0.05, spot.shape), 0, 1)
    return Dataset(images, labels)


def make_gaussian_blobs(n_per: int = 100, centers=2, dim: int = 8, spread: float = 0.02,
                        seed: int = 0):
    """Feature-space Gaussian blobs around random unit-norm centers.

    Returns ``(x, labels)``.
    """
    rng = np.random.default_rng(seed)
    c = rng.standard_normal((centers, dim))
    c /= np.linalg.norm(c, axis=1, keepdims=True)
    x = np.concatenate([ci + spread * rng.standard_normal((n_per, dim)) for ci in c])
    labels = np.repeat(np.arange(centers), n_per)
    return x, labels
