"""Lloyd's k-means with repair of empty clusters.

Centroids are stored row-wise, shape ``(k, d)``.  Distances and inertia are
computed in float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_ITERS = 20
PERTURBATION = 1e-6
MAX_REPAIR_ROUNDS = 10


@dataclass
class ClusterModel:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    n_reassigned: int = 0
    history: list = field(default_factory=list)

    @property
    def k(self):
        return len(self.centroids)

    def sizes(self):
        return np.bincount(self.assignments, minlength=self.k)


def _sq_dists(x, centroids):
    # ||x||^2 - 2 x.c + ||c||^2, clipped at zero against cancellation.
    xx = (x * x).sum(axis=1)[:, None]
    cc = (centroids * centroids).sum(axis=1)[None, :]
    return np.maximum(xx - 2.0 * (x @ centroids.T) + cc, 0.0)


def inertia_of(x, centroids, assignments) -> float:
    x = np.asarray(x, dtype=np.float64)
    diff = x - np.asarray(centroids, dtype=np.float64)[assignments]
    return float((diff * diff).sum() / len(x))


def assign_points(centroids, x):
    """Nearest centroid for every row of ``x``; ties go to the lowest index.

    Returns ``(assignments, inertia)``.
    """
    x = np.asarray(x, dtype=np.float64)
    centroids = np.asarray(centroids, dtype=np.float64)
    if x.ndim != 2 or centroids.ndim != 2 or x.shape[1] != centroids.shape[1]:
        raise ValueError("points and centroids must share the feature dimension")
    assignments = np.argmin(_sq_dists(x, centroids), axis=1)
    return assignments, inertia_of(x, centroids, assignments)


def _split_donor(x, centroids, assignments, empty, donor, rng, noise_scale):
    members = np.flatnonzero(assignments == donor)
    new_c = centroids[donor] + rng.standard_normal(centroids.shape[1]) * noise_scale
    centroids[empty] = new_c
    d_donor = ((x[members] - centroids[donor]) ** 2).sum(axis=1)
    d_new = ((x[members] - new_c) ** 2).sum(axis=1)
    to_new = d_new < d_donor
    if not to_new.any() or to_new.all():
        # Distances cannot separate the members (e.g. duplicates): the member
        # leaning most towards the new centroid (lowest id on ties) moves alone.
        pick = int(np.argmax(d_donor - d_new))
        to_new = np.zeros(len(members), dtype=bool)
        to_new[pick] = True
    assignments[members[to_new]] = empty


def reassign_empty(model: ClusterModel, x, rng: np.random.Generator) -> ClusterModel:
    """Repopulate empty clusters by splitting randomly chosen non-empty ones.

    For each empty cluster a donor is drawn with probability proportional to
    its size (among clusters of size >= 2), its centroid is copied with a
    small Gaussian perturbation, and the donor's points are shared between
    the two centroids.
    """
    x = np.asarray(x, dtype=np.float64)
    k = model.k
    sizes = model.sizes()
    if not (sizes == 0).any():
        return model
    if sizes.sum() == 0:
        raise ValueError("cannot repair: every cluster is empty")
    centroids = np.array(model.centroids, dtype=np.float64)
    assignments = model.assignments.copy()
    noise_scale = PERTURBATION * float(np.sqrt((x * x).sum(axis=1)).mean())
    repaired = 0
    for _ in range(MAX_REPAIR_ROUNDS):
        sizes = np.bincount(assignments, minlength=k)
        empties = np.flatnonzero(sizes == 0)
        if len(empties) == 0:
            break
        for empty in empties:
            sizes = np.bincount(assignments, minlength=k)
            splittable = np.where(sizes >= 2, sizes, 0).astype(np.float64)
            if splittable.sum() == 0:
                break
            donor = int(rng.choice(k, p=splittable / splittable.sum()))
            _split_donor(x, centroids, assignments, int(empty), donor, rng, noise_scale)
            repaired += 1
    return ClusterModel(centroids, assignments, inertia_of(x, centroids, assignments),
                        model.n_reassigned + repaired, list(model.history))


def _update_centroids(x, assignments, old):
    k, d = old.shape
    sums = np.zeros((k, d))
    np.add.at(sums, assignments, x)
    counts = np.bincount(assignments, minlength=k)
    out = old.copy()
    nz = counts > 0
    out[nz] = sums[nz] / counts[nz, None]
    return out


def kmeans_fit(x, k: int, iters: int = DEFAULT_ITERS, rng: np.random.Generator | None = None,
               reassign: bool = True) -> ClusterModel:
    """Cluster the rows of ``x`` into ``k`` groups.

    Centroids start at ``k`` distinct rows drawn without replacement.  Each
    iteration assigns, repairs empty clusters (unless ``reassign`` is off)
    and moves centroids to their cluster means; ``history`` records the
    inertia after every iteration.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > n:
        raise ValueError(f"k exceeds n ({k} > {n})")
    if iters < 1:
        raise ValueError("iters must be at least 1")
    if rng is None:
        rng = np.random.default_rng(0)
    centroids = x[np.sort(rng.choice(n, size=k, replace=False))].copy()
    model = None
    history = []
    n_reassigned = 0
    prev = None
    for _ in range(iters):
        assignments, inertia = assign_points(centroids, x)
        model = ClusterModel(centroids, assignments, inertia, n_reassigned)
        if reassign:
            model = reassign_empty(model, x, rng)
            n_reassigned = model.n_reassigned
        centroids = _update_centroids(x, model.assignments, model.centroids)
        history.append(inertia_of(x, centroids, model.assignments))
        converged = prev is not None and np.array_equal(prev, model.assignments)
        prev = model.assignments
        if converged:
            break
    assignments = model.assignments
    return ClusterModel(centroids, assignments, inertia_of(x, centroids, assignments), n_reassigned, history)
