"""Density clustering of banner distance matrices.

HDBSCAN* over the precomputed windowed-edit-distance matrix, with
min_cluster_size and min_samples both defaulting to 5 so the clusterer
aggressively forms small, tight clusters.  Points it declines to assign
come back as one noise cluster, which downstream labeling discards.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.cluster import HDBSCAN

from ..errors import ConfigError


@dataclass(frozen=True)
class Cluster:
    member_indices: tuple[int, ...]
    is_noise: bool = False
    mined: tuple[tuple[str, int], ...] = field(default=(), compare=False)


def cluster_banners(
    matrix: np.ndarray, min_cluster_size: int = 5, min_samples: int = 5
) -> list[Cluster]:
    """Cluster a precomputed distance matrix; noise cluster comes last."""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ConfigError(f"distance matrix must be square, got {matrix.shape}")
    n = matrix.shape[0]
    if n < min_cluster_size:
        return [Cluster(tuple(range(n)), is_noise=True)] if n else []
    # allow_single_cluster: a sampled corpus can legitimately be one banner
    # family plus stragglers, and the default root-exclusion rule would
    # return all noise for it.
    clusterer = HDBSCAN(
        min_cluster_size=min_cluster_size,
        min_samples=min_samples,
        metric="precomputed",
        allow_single_cluster=True,
    )
    labels = clusterer.fit_predict(matrix.astype(np.float64))
    clusters: list[Cluster] = []
    for label in sorted(set(labels)):
        if label == -1:
            continue
        members = tuple(int(i) for i in np.flatnonzero(labels == label))
        clusters.append(Cluster(members, is_noise=False))
    noise = tuple(int(i) for i in np.flatnonzero(labels == -1))
    clusters.append(Cluster(noise, is_noise=True))
    return clusters
