"""Feature post-processing before clustering: PCA, whitening, L2 normalization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import DTYPE

WHITEN_EPS = 1e-5
DEFAULT_PCA_DIM = 256
# Eigenvalues below this fraction of the largest one count as numerically zero.
RANK_RTOL = 1e-10


class RankDeficientError(ValueError):
    pass


@dataclass
class PcaModel:
    """Mean, top principal directions (as columns) and their variances."""

    mean: np.ndarray
    components: np.ndarray
    eigvals: np.ndarray
    eps: float = WHITEN_EPS

    @property
    def dim_in(self):
        return self.components.shape[0]

    @property
    def dim_out(self):
        return self.components.shape[1]


def numerical_rank(x) -> int:
    x = np.asarray(x, dtype=np.float64)
    xc = x - x.mean(axis=0)
    ev = np.linalg.eigvalsh(xc.T @ xc / len(x))
    top = ev.max(initial=0.0)
    if top <= 0:
        return 0
    return int((ev > top * RANK_RTOL).sum())


def fit_pca(x, d_out: int, eps: float = WHITEN_EPS) -> PcaModel:
    """Eigendecomposition of the population covariance of ``x``.

    Each component is signed so that its largest-magnitude coefficient is
    positive (the first such coefficient on ties).
    """
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if not 1 <= d_out <= min(n, d):
        raise ValueError(f"d_out={d_out} outside [1, min(n, d)={min(n, d)}]")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / n
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(-eigvals, kind="stable")[:d_out]
    eigvals = eigvals[order]
    comps = eigvecs[:, order]
    top = max(eigvals[0], 0.0)
    if top <= 0 or eigvals[-1] <= top * RANK_RTOL:
        raise RankDeficientError(f"rank deficient: fewer than {d_out} non-degenerate directions")
    pivots = np.argmax(np.abs(comps), axis=0)
    signs = np.sign(comps[pivots, np.arange(d_out)])
    comps = comps * signs
    return PcaModel(mean, comps, eigvals, eps)


def pca_whiten_transform(model: PcaModel, x) -> np.ndarray:
    """Project on the principal directions and scale each to unit variance."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.dim_in:
        raise ValueError(f"feature dim {x.shape[-1]} does not match PCA input dim {model.dim_in}")
    y = (x - model.mean) @ model.components / np.sqrt(model.eigvals + model.eps)
    return y.astype(DTYPE)


def l2_normalize(x, floor: float = 1e-12):
    """Scale rows to unit norm.  Returns ``(rows, n_zero)``; tiny rows become zeros."""
    x = np.asarray(x)
    norms = np.sqrt((x.astype(np.float64) ** 2).sum(axis=1))
    zero = norms < floor
    scale = np.where(zero, 0.0, 1.0 / np.where(zero, 1.0, norms))
    return (x * scale[:, None]).astype(x.dtype if x.dtype.kind == "f" else DTYPE), int(zero.sum())


def pipeline(x, d_out: int | None = None, eps: float = WHITEN_EPS):
    """Fit PCA on ``x``, whiten and L2-normalize it.

    ``d_out`` defaults to ``min(256, d, n)`` and is lowered to the numerical
    rank of ``x`` when the features are degenerate.  Returns
    ``(features, model, n_zero_rows)``.
    """
    n, d = np.shape(x)
    if d_out is None:
        d_out = DEFAULT_PCA_DIM
    d_out = min(d_out, n, d, max(numerical_rank(x), 1))
    model = fit_pca(x, d_out, eps)
    y, n_zero = l2_normalize(pca_whiten_transform(model, x))
    return y, model, n_zero
