"""Clustering diagnostics: NMI, cluster-size histogram, pure-cluster fraction."""
from __future__ import annotations

import numpy as np


def _contingency(a, b):
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    return table


def _entropy(counts, n):
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(a, b) -> float:
    """Mutual information over the geometric mean of the two entropies (plug-in, nats).

    When either partition has zero entropy the score is 1 if the two
    partitions are identical up to relabeling, else 0.
    """
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise ValueError("nmi needs at least one element")
    n = len(a)
    table = _contingency(a, b)
    ha = _entropy(table.sum(axis=1), n)
    hb = _entropy(table.sum(axis=0), n)
    if ha == 0.0 or hb == 0.0:
        same = table.shape[0] == table.shape[1] and np.count_nonzero(table) == table.shape[0]
        return 1.0 if same else 0.0
    nz = table > 0
    pij = table[nz] / n
    pi = table.sum(axis=1, keepdims=True).repeat(table.shape[1], axis=1)[nz] / n
    pj = table.sum(axis=0, keepdims=True).repeat(table.shape[0], axis=0)[nz] / n
    mi = float((pij * np.log(pij / (pi * pj))).sum())
    # Symmetric by construction up to rounding; clamp rounding outside [0, 1].
    return min(max(mi / np.sqrt(ha * hb), 0.0), 1.0)


def cluster_histogram(assignments, k: int | None = None) -> list:
    """Cluster sizes, largest first; with ``k`` given, empty clusters appear as 0."""
    assignments = np.asarray(assignments, dtype=np.int64)
    if k is None:
        sizes = np.unique(assignments, return_counts=True)[1] if assignments.size else np.array([], int)
    else:
        sizes = np.bincount(assignments, minlength=k)
    return sorted((int(s) for s in sizes), reverse=True)


def pure_cluster_fraction(assignments, labels, threshold: float = 0.7) -> float:
    """Fraction of points whose cluster's majority label share strictly exceeds ``threshold``.

    Perfectly pure clusters always count, so ``threshold=1`` selects exactly
    the single-label clusters.
    """
    assignments = np.asarray(assignments)
    labels = np.asarray(labels)
    if len(assignments) != len(labels):
        raise ValueError(f"length mismatch: {len(assignments)} vs {len(labels)}")
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    table = _contingency(assignments, labels)
    size = table.sum(axis=1)
    share = table.max(axis=1) / size
    pure = (share > threshold) | (table.max(axis=1) == size)
    return float(size[pure].sum() / len(assignments))


def max_cluster_share(assignments) -> float:
    return float(np.bincount(np.unique(assignments, return_inverse=True)[1]).max() / len(assignments))


def spearman(x, y) -> float:
    from scipy.stats import spearmanr

    return float(spearmanr(x, y).statistic)
