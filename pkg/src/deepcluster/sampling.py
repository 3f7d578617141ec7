"""Class-balanced draws over pseudo-labels, and the equivalent loss weights."""
import numpy as np


def uniform_cluster_sampler(assignments, n_draws: int, rng: np.random.Generator) -> np.ndarray:
    """Draw indices by picking a non-empty cluster uniformly, then a member uniformly.

    Draws are with replacement.
    """
    assignments = np.asarray(assignments)
    if assignments.size == 0:
        raise ValueError("empty assignment list")
    if n_draws < 1:
        raise ValueError("n_draws must be at least 1")
    order = np.argsort(assignments, kind="stable")
    clusters, starts, sizes = np.unique(assignments[order], return_index=True, return_counts=True)
    which = rng.integers(0, len(clusters), size=n_draws)
    offsets = np.floor(rng.random(n_draws) * sizes[which]).astype(np.int64)
    return order[starts[which] + offsets]


def inverse_size_weights(assignments) -> np.ndarray:
    """``1 / |cluster(n)|`` per point, so every cluster carries total weight 1."""
    assignments = np.asarray(assignments)
    if assignments.size == 0:
        raise ValueError("empty assignment list")
    _, inverse, counts = np.unique(assignments, return_inverse=True, return_counts=True)
    return 1.0 / counts[inverse].astype(np.float64)
