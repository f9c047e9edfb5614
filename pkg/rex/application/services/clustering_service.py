"""
Seeded k-means (Lloyd iteration with k-means++ initialisation)
"""
import logging
import math
from typing import Optional

import numpy as np

from rex.domain.models.info_content import ClusterAssignment, EmbeddingTable
from rex.errors import ClusteringError

logger = logging.getLogger(__name__)

# points x centres handled per distance block
_BLOCK_CELLS = 4_000_000


def default_cluster_count(n_entities: int, fraction: float = 0.1) -> int:
    """Number of clusters as a fraction of the node count, at least 1"""
    return max(1, math.ceil(fraction * n_entities))


def _squared_distances(points: np.ndarray, centres: np.ndarray) -> np.ndarray:
    d = (np.einsum("ij,ij->i", points, points)[:, None]
         - 2.0 * points @ centres.T
         + np.einsum("ij,ij->i", centres, centres)[None, :])
    return np.maximum(d, 0.0)


def _assign(points: np.ndarray, centres: np.ndarray):
    """Nearest centre per point (lowest index wins ties) and its squared distance"""
    n = points.shape[0]
    block = max(1, _BLOCK_CELLS // max(centres.shape[0], 1))
    labels = np.empty(n, dtype=np.int64)
    dist = np.empty(n, dtype=np.float64)
    for start in range(0, n, block):
        d = _squared_distances(points[start:start + block], centres)
        idx = np.argmin(d, axis=1)
        labels[start:start + block] = idx
        dist[start:start + block] = d[np.arange(d.shape[0]), idx]
    return labels, dist


def _kmeans_plus_plus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centres = np.empty((k, points.shape[1]), dtype=np.float64)
    centres[0] = points[rng.integers(n)]
    closest = _squared_distances(points, centres[:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            raise ClusteringError(f"Cannot place {k} distinct centres: duplicate centre at {j}")
        choice = rng.choice(n, p=closest / total)
        centres[j] = points[choice]
        closest = np.minimum(closest, _squared_distances(points, centres[j:j + 1])[:, 0])
    return centres


def kmeans_cluster(emb: EmbeddingTable, k: int, seed: int, max_iters: int = 100) -> ClusterAssignment:
    """
    Cluster entity embeddings with Lloyd iterations

    Args:
        emb: Entity embeddings
        k: Number of clusters, 1 <= k <= number of entities
        seed: Seed for the k-means++ initial centres
        max_iters: Iteration cap

    Returns:
        ClusterAssignment with the distortion after every iteration
    """
    points = emb.vectors
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ClusteringError(f"k must lie in [1, {n}], got {k}")
    distinct = np.unique(points, axis=0).shape[0]
    if k > distinct:
        raise ClusteringError(f"k={k} exceeds the {distinct} distinct vectors: duplicate centres")

    rng = np.random.default_rng(seed)
    centres = _kmeans_plus_plus(points, k, rng)
    labels, dist = _assign(points, centres)
    history = [float(dist.sum())]
    iterations = 0

    for iterations in range(1, max_iters + 1):
        sums = np.zeros_like(centres)
        np.add.at(sums, labels, points)
        counts = np.bincount(labels, minlength=k)
        nonempty = counts > 0
        centres[nonempty] = sums[nonempty] / counts[nonempty, None]
        for c in np.flatnonzero(~nonempty):
            # reseed an empty cluster at the currently worst-served point
            far = int(np.argmax(dist))
            centres[c] = points[far]
            dist[far] = 0.0

        new_labels, dist = _assign(points, centres)
        history.append(float(dist.sum()))
        stable = np.array_equal(new_labels, labels)
        labels = new_labels
        if stable:
            break

    logger.info(f"k-means: k={k}, {iterations} iterations, distortion {history[-1]:.6g}")
    return ClusterAssignment(labels=labels, k=k, seed=seed, iterations=iterations,
                             distortion_history=tuple(history))


def cluster_entities(emb: EmbeddingTable, k: Optional[int], seed: int, max_iters: int = 100) -> ClusterAssignment:
    """k-means with the default cluster count when ``k`` is not given"""
    return kmeans_cluster(emb, k or default_cluster_count(len(emb)), seed, max_iters)
