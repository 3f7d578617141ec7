"""Probes on frozen features: linear classification, retrieval, filter visualization."""
from __future__ import annotations

import numpy as np

from .model import Net, softmax_nll_loss
from .tensor import make_rng

PROBE_LR = 0.1
PROBE_EPOCHS = 100
PROBE_TRAIN_FRAC = 0.8
PROBE_BATCH = 256
CLIP = 3.0


def split_indices(n, train_frac, seed):
    perm = make_rng(seed).permutation(n)
    n_train = int(round(train_frac * n))
    return perm[:n_train], perm[n_train:]


def linear_probe(features, labels, train_frac=PROBE_TRAIN_FRAC, seed=0, lr=PROBE_LR,
                 epochs=PROBE_EPOCHS, momentum=0.9, batch_size=PROBE_BATCH, return_model=False):
    """Held-out accuracy of a softmax classifier trained on frozen features.

    Features are standardized with the training split's per-dimension mean
    and standard deviation; the input array is never modified.
    """
    if labels is None:
        raise ValueError("a linear probe needs labels")
    feats = np.asarray(features, dtype=np.float64).reshape(len(features), -1)
    labels = np.asarray(labels, dtype=np.int64)
    if len(feats) != len(labels):
        raise ValueError("one label per feature row is required")
    tr, te = split_indices(len(feats), train_frac, seed)
    if len(np.unique(labels[tr])) < 2:
        raise ValueError("the training split holds a single class")
    if len(te) == 0:
        raise ValueError("empty held-out split")
    mu = feats[tr].mean(axis=0)
    sd = feats[tr].std(axis=0)
    sd[sd < 1e-8] = 1.0
    z = (feats - mu) / sd
    k = int(labels.max()) + 1
    rng = make_rng(seed, 1)
    W = np.zeros((z.shape[1], k))
    b = np.zeros(k)
    vW = np.zeros_like(W)
    vb = np.zeros_like(b)
    for _ in range(epochs):
        order = tr[rng.permutation(len(tr))]
        for s in range(0, len(order), batch_size):
            idx = order[s : s + batch_size]
            logits = z[idx] @ W + b
            _, d = softmax_nll_loss(logits, labels[idx])
            vW = momentum * vW + z[idx].T @ d
            vb = momentum * vb + d.sum(axis=0)
            W -= lr * vW
            b -= lr * vb
    pred = np.argmax(z[te] @ W + b, axis=1)
    acc = float((pred == labels[te]).mean())
    if return_model:
        return acc, (W, b, mu, sd)
    return acc


def knn_retrieval(features, query_id: int, topk: int, ids=None):
    """Ids of the ``topk`` rows closest to the query row (query excluded, ties to lower id)."""
    x = np.asarray(features, dtype=np.float64)
    n = len(x)
    ids = np.arange(n) if ids is None else np.asarray(ids)
    where = np.flatnonzero(ids == query_id)
    if len(where) == 0:
        raise KeyError(f"unknown query id {query_id}")
    if not 1 <= topk < n:
        raise ValueError("topk must satisfy 1 <= topk < n")
    q = where[0]
    d = ((x - x[q]) ** 2).sum(axis=1)
    d[q] = np.inf
    order = np.lexsort((ids, d))
    return ids[order[:topk]]


def _mean_activation(net: Net, x, layer, unit):
    caches, act, _ = net.forward(x[None], train=False, upto=layer)
    a = act[0, unit]
    return float(a.mean()), caches, act


def synthesize_max_activation(net: Net, layer: int, unit: int, steps: int = 100, step_size: float = 0.1,
                              seed: int = 0, init_scale: float = 0.01, return_history: bool = False):
    """Gradient ascent on the input to maximize the mean activation of one channel.

    The input starts as small Gaussian noise and is clipped to [-3, 3] after
    every step.  A step that would lower the objective is retried with half
    the step size (up to 30 halvings); when none helps, the ascent stops.
    """
    if not 0 <= layer < len(net.layers):
        raise IndexError(f"layer {layer} out of range")
    shape = net.shapes[layer + 1]
    if not 0 <= unit < shape[0]:
        raise IndexError(f"filter {unit} out of range for layer {layer} with {shape[0]} channels")
    x = (make_rng(seed).standard_normal(net.config.input_shape) * init_scale).astype(net.dtype)
    obj, caches, act = _mean_activation(net, x, layer, unit)
    history = [obj]
    for _ in range(steps):
        d = np.zeros_like(act)
        d[0, unit] = 1.0 / act[0, unit].size
        _, dx = net.backward(caches, dbody=d, upto=layer)
        g = dx[0]
        if not np.any(g):
            break
        eta = step_size
        for _ in range(30):
            cand = np.clip(x + eta * g, -CLIP, CLIP).astype(net.dtype)
            cand_obj, cand_caches, cand_act = _mean_activation(net, cand, layer, unit)
            if cand_obj >= obj:
                break
            eta /= 2
        else:
            break
        x, obj, caches, act = cand, cand_obj, cand_caches, cand_act
        history.append(obj)
    return (x, history) if return_history else x


def to_display(image):
    """Rescale each channel to [0, 1] for writing as an image."""
    image = np.asarray(image, dtype=np.float64)
    lo = image.min(axis=(-2, -1), keepdims=True)
    hi = image.max(axis=(-2, -1), keepdims=True)
    return (image - lo) / np.where(hi > lo, hi - lo, 1.0)
