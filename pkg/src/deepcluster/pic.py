"""Power Iteration Clustering on a k-nearest-neighbor similarity graph.

The number of clusters is not an input: it is the number of local maxima of
the score vector ``v`` over the graph.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

DEFAULT_NN = 5
DEFAULT_SIGMA = 0.2
DEFAULT_ALPHA = 1e-3
DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITERS = 200


@dataclass
class PicGraph:
    """Directed kNN graph: ``neighbors[i]`` are i's out-neighbors, nearest first."""

    neighbors: np.ndarray
    weights: np.ndarray
    sigma: float

    @property
    def n(self):
        return len(self.neighbors)

    def matrix(self):
        n, nn = self.neighbors.shape
        rows = np.repeat(np.arange(n), nn)
        return sparse.csr_matrix((self.weights.ravel(), (rows, self.neighbors.ravel())), shape=(n, n))


def knn(x, nn: int, block: int = 1024):
    """Exact nearest neighbors (self excluded, distance ties to the lower id).

    Returns ``(indices, squared_distances)``, both ``(n, nn)``.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if not 1 <= nn < n:
        raise ValueError(f"nn must satisfy 1 <= nn < n (nn={nn}, n={n})")
    sq = (x * x).sum(axis=1)
    idx = np.empty((n, nn), dtype=np.int64)
    dist = np.empty((n, nn))
    for s in range(0, n, block):
        q = x[s : s + block]
        d = np.maximum(sq[s : s + block, None] - 2.0 * (q @ x.T) + sq[None, :], 0.0)
        rows = np.arange(len(q))
        d[rows, rows + s] = np.inf
        order = np.argsort(d, axis=1, kind="stable")[:, :nn]
        idx[s : s + block] = order
        dist[s : s + block] = np.take_along_axis(d, order, axis=1)
    return idx, dist


def build_knn_graph(x, nn: int = DEFAULT_NN, sigma: float = DEFAULT_SIGMA) -> PicGraph:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    idx, dist = knn(x, nn)
    return PicGraph(idx, np.exp(-dist / sigma**2), sigma)


def pic_iterate(g: PicGraph, alpha: float = DEFAULT_ALPHA, max_iters: int = DEFAULT_MAX_ITERS,
                tol: float = DEFAULT_TOL, callback=None) -> np.ndarray:
    """Damped power iteration ``v <- N1(alpha (G + G^T) v + (1 - alpha) v)`` from uniform v.

    Stops when the largest coordinate change falls below ``tol`` or after
    ``max_iters`` updates.  ``callback(v)`` sees every iterate.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    G = g.matrix()
    S = (G + G.T).tocsr()
    v = np.full(g.n, 1.0 / g.n)
    for _ in range(max_iters):
        nxt = alpha * (S @ v) + (1 - alpha) * v
        total = np.abs(nxt).sum()
        if total == 0 or not np.isfinite(total):
            raise FloatingPointError("cannot L1-normalize a zero score vector")
        nxt /= total
        if callback is not None:
            callback(nxt)
        delta = np.abs(nxt - v).max()
        v = nxt
        if delta < tol:
            break
    return v


def pic_extract_clusters(g: PicGraph, v, return_maxima: bool = False):
    """Clusters = connected components of the argmax-ascent subgraph.

    Each node keeps its one out-edge maximizing ``w_ij (v_j - v_i)`` when that
    value is positive; local maxima keep none.  Cluster ids are numbered in
    order of their smallest member.
    """
    v = np.asarray(v, dtype=np.float64)
    n = g.n
    if v.shape != (n,):
        raise ValueError("v must have one entry per node")
    gain = g.weights * (v[g.neighbors] - v[:, None])
    best = np.argmax(gain, axis=1)
    has_edge = gain[np.arange(n), best] > 0
    src = np.flatnonzero(has_edge)
    dst = g.neighbors[src, best[src]]
    adj = sparse.csr_matrix((np.ones(len(src)), (src, dst)), shape=(n, n))
    _, labels = connected_components(adj, directed=True, connection="weak")
    # Renumber by first appearance so ids do not depend on scipy internals.
    _, first = np.unique(labels, return_index=True)
    remap = np.empty(labels.max() + 1, dtype=np.int64)
    remap[labels[np.sort(first)]] = np.arange(len(first))
    assignments = remap[labels]
    if return_maxima:
        return assignments, np.flatnonzero(~has_edge)
    return assignments


def maxima_per_cluster(assignments, maxima):
    return np.bincount(assignments[maxima], minlength=assignments.max() + 1)


def pic_cluster(x, nn=DEFAULT_NN, sigma=DEFAULT_SIGMA, alpha=DEFAULT_ALPHA,
                max_iters=DEFAULT_MAX_ITERS, tol=DEFAULT_TOL):
    """Graph construction, power iteration and extraction in one call."""
    g = build_knn_graph(x, nn, sigma)
    v = pic_iterate(g, alpha, max_iters, tol)
    return pic_extract_clusters(g, v)
