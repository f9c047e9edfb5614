"""Embeddings, cluster assignments and information-content tables.

Notation used in the derivations: a random triple T = (S, R, O) is drawn
uniformly from the graph, and IC(v) is the surprisal of the event
(S = v) or (O = v). On the clustered graph the same reasoning applies to
(S_c, R_c, O_c) with v replaced by its cluster.
"""
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from rex.core import ICMode, Normalization
from rex.errors import ContractViolation, UndefinedICError


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    """Row ``v`` of ``vectors`` is the embedding of entity ``v``"""
    vectors: np.ndarray

    def __post_init__(self) -> None:
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise ContractViolation("Embedding table must be a 2-D array")
        if not np.all(np.isfinite(vectors)):
            raise ContractViolation("Embedding table contains non-finite values")
        object.__setattr__(self, "vectors", vectors)

    @property
    def dimension(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return int(self.vectors.shape[0])

    def __getitem__(self, v: int) -> np.ndarray:
        return self.vectors[v]


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    """kappa: entity id -> cluster id in [0, k)"""
    labels: np.ndarray
    k: int
    seed: int
    iterations: int = 0
    distortion_history: Tuple[float, ...] = ()

    def __post_init__(self) -> None:
        labels = np.asarray(self.labels, dtype=np.int64)
        if self.k < 1:
            raise ContractViolation("Cluster count must be positive")
        if len(labels) and (labels.min() < 0 or labels.max() >= self.k):
            raise ContractViolation("Cluster ids must lie in [0, k)")
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def cluster_of(self, v: int) -> int:
        return int(self.labels[v])

    def members(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.labels == c)

    @property
    def distortion(self) -> Optional[float]:
        return self.distortion_history[-1] if self.distortion_history else None


@dataclass(eq=False)
class ICTable:
    """Per-node (or per node and relation) information content.

    ``node_raw[v]`` holds the relation-agnostic score of entity ``v`` (IC or
    CIC; NaN for isolated nodes). In CIC_BY_RELATION mode
    ``relation_raw[(cluster, relation)]`` holds the relation-conditioned score
    shared by every member of the cluster, and ``node_raw`` is the fallback
    used when the cluster never carries the queried relation. Stored raw
    scores are never negative.
    """
    mode: ICMode
    z: float
    node_raw: np.ndarray
    normalization: Normalization = Normalization.LOG_SIZE
    relation_raw: Dict[Tuple[int, int], float] = field(default_factory=dict)
    cluster_labels: Optional[np.ndarray] = None
    k: Optional[int] = None
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        self.mode = ICMode(self.mode)
        self.normalization = Normalization(self.normalization)
        if self.mode is not ICMode.IC and self.cluster_labels is None:
            raise ContractViolation(f"{self.mode.value} table needs cluster labels")

    @property
    def num_entities(self) -> int:
        return int(self.node_raw.shape[0])

    def normalize(self, raw: float) -> float:
        if self.z <= 0:
            return 0.0
        value = raw / self.z
        if self.normalization is Normalization.LOG_SIZE:
            return float(min(max(value, 0.0), 1.0))
        return float(value)

    def raw_score(self, v: int, relation: Optional[int] = None) -> float:
        """Raw score of ``v``; conditioned on ``relation`` in CIC_BY_RELATION mode"""
        if self.mode is ICMode.CIC_BY_RELATION and relation is not None:
            score = self.relation_raw.get((int(self.cluster_labels[v]), int(relation)))
            if score is not None:
                return score
        score = float(self.node_raw[v])
        if np.isnan(score):
            raise UndefinedICError(f"IC undefined for isolated entity {v}")
        return score

    def score(self, v: int, relation: Optional[int] = None) -> float:
        return self.normalize(self.raw_score(v, relation))

    def rows(self) -> Iterator[Tuple[int, Optional[int], float, float]]:
        """(entity, relation or None, raw, normalized) for every defined entry"""
        if self.mode is ICMode.CIC_BY_RELATION:
            by_cluster: Dict[int, List[Tuple[int, float]]] = {}
            for (c, r), raw in sorted(self.relation_raw.items()):
                by_cluster.setdefault(c, []).append((r, raw))
            for v in range(self.num_entities):
                for r, raw in by_cluster.get(int(self.cluster_labels[v]), []):
                    yield v, r, raw, self.normalize(raw)
            return
        for v in range(self.num_entities):
            raw = float(self.node_raw[v])
            if not np.isnan(raw):
                yield v, None, raw, self.normalize(raw)
