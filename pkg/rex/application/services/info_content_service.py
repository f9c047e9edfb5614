"""
Information-content service: embeddings, clustered graph and IC scoring
"""
import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from rex.core import ICMode, Normalization, Triple
from rex.application.schemas.config_schemas import InfoContentConfig
from rex.application.services.clustering_service import cluster_entities
from rex.application.services.graph_service import iter_records, vocabulary_hash
from rex.domain.models.graph import KnowledgeGraph
from rex.domain.models.info_content import ClusterAssignment, EmbeddingTable, ICTable
from rex.domain.models.trajectory import GraphPath
from rex.errors import (ConfigError, ContractViolation, CoverageError, EmptyGraphError, ParseError,
                        UndefinedICError)

logger = logging.getLogger(__name__)


# Embeddings

def relation_profile(kg: KnowledgeGraph) -> np.ndarray:
    """Dense |E| x |R| matrix of degree_by_relation counts"""
    profile = np.zeros((kg.num_entities, kg.num_relations), dtype=np.float64)
    ents, rels, counts = kg.relation_degree_table()
    profile[ents, rels] = counts
    return profile


def projection_matrix(n_relations: int, d: int, seed: int) -> np.ndarray:
    """Seeded Gaussian projection from relation-profile space to ``d`` dimensions"""
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, 1.0 / math.sqrt(d), size=(n_relations, d))


def fallback_embeddings(kg: KnowledgeGraph, d: int, seed: int) -> EmbeddingTable:
    """
    Embeddings used when no pretrained file is supplied

    Each entity is the random projection of its relation-degree profile, so
    entities with identical profiles share an embedding.
    """
    if d < 2:
        raise ContractViolation(f"Embedding dimension must be >= 2, got {d}")
    if len(kg) == 0:
        raise EmptyGraphError("Cannot embed an empty graph")
    projection = projection_matrix(kg.num_relations, d, seed)
    vectors = np.zeros((kg.num_entities, d), dtype=np.float64)
    ents, rels, counts = kg.relation_degree_table()
    np.add.at(vectors, ents, counts[:, None] * projection[rels])
    return EmbeddingTable(vectors=vectors)


def load_embeddings(path: Union[str, Path], kg: KnowledgeGraph) -> EmbeddingTable:
    """
    Read an ``entity<TAB>v1 v2 ... vd`` file

    Labels not in the graph are ignored; graph entities missing from the file
    receive the mean vector.
    """
    rows = {}
    dimension = None
    for line_number, (label, values) in iter_records(path, 2):
        try:
            vector = np.array([float(x) for x in values.split()], dtype=np.float64)
        except ValueError:
            raise ParseError("non-numeric embedding value", path=str(path), line_number=line_number) from None
        if dimension is None:
            dimension = len(vector)
        if len(vector) != dimension or dimension == 0:
            raise ParseError(f"expected {dimension} values, got {len(vector)}",
                             path=str(path), line_number=line_number)
        if not np.all(np.isfinite(vector)):
            raise ParseError("non-finite embedding value", path=str(path), line_number=line_number)
        if kg.has_entity(label):
            rows[kg.entity_id(label)] = vector
    if not rows:
        raise ParseError("no embedding matched a graph entity", path=str(path))

    mean = np.mean(np.stack(list(rows.values())), axis=0)
    missing = kg.num_entities - len(rows)
    if missing:
        logger.warning(f"{missing} entities have no embedding in {path}; using the mean vector")
    vectors = np.stack([rows.get(v, mean) for v in range(kg.num_entities)])
    return EmbeddingTable(vectors=vectors)


# Clustered graph

def build_clustered_graph(kg: KnowledgeGraph, clusters: ClusterAssignment) -> KnowledgeGraph:
    """
    Derive G_c: one node per cluster, edge (C_i, r, C_j) iff some (u, r, v)
    has u in C_i and v in C_j. Relation ids are shared with ``kg``.
    """
    if len(clusters) < kg.num_entities:
        raise CoverageError(f"Cluster assignment covers {len(clusters)} of {kg.num_entities} entities")
    labels = clusters.labels
    triples = kg.triples
    mapped = np.stack([labels[triples[:, 0]], triples[:, 1], labels[triples[:, 2]]], axis=1)
    return KnowledgeGraph.from_arrays(
        entity_labels=[f"C{c}" for c in range(clusters.k)],
        relation_labels=kg.relation_labels,
        triples=mapped,
        relation_inverse=kg.relation_inverse,
        relation_is_inverse=kg.relation_is_inverse,
    )


# Node scores

def _surprisal(count: int, total: int, what: str) -> float:
    if count < 1 or total < 1:
        raise UndefinedICError(f"IC undefined for {what}: degree {count} of {total}")
    return -math.log(count / total)


def node_ic(kg: KnowledgeGraph, v: int) -> float:
    """IC(v) = -ln(degree(v) / |G|)"""
    return _surprisal(kg.degree(v), len(kg), f"entity {v}")


def clustered_node_ic(kg_c: KnowledgeGraph, clusters: ClusterAssignment, v: int) -> float:
    """IC_c(v) = -ln(degree_Gc(kappa(v)) / |G_c|)"""
    c = clusters.cluster_of(v)
    return _surprisal(kg_c.degree(c), len(kg_c), f"cluster {c} of entity {v}")


def clustered_node_ic_by_relation(kg_c: KnowledgeGraph, clusters: ClusterAssignment,
                                  v: int, r: int) -> float:
    """-ln(degree_Gc(kappa(v), r) / N_r), N_r = clustered triples with relation r"""
    n_r = kg_c.relation_size(r)
    if n_r == 0:
        raise UndefinedICError(f"Relation {r} does not occur in the clustered graph")
    c = clusters.cluster_of(v)
    return _surprisal(kg_c.degree_by_relation(c, r), n_r, f"cluster {c} under relation {r}")


def _raw_from_degrees(degrees: np.ndarray, total: int) -> np.ndarray:
    with np.errstate(divide="ignore"):
        raw = -np.log(degrees / float(total))
    raw = np.where(degrees > 0, raw, np.nan)
    if np.nanmin(raw, initial=0.0) < 0:
        logger.debug("Clamping negative IC scores produced by self-loops")
    return np.where(np.isnan(raw), np.nan, np.maximum(raw, 0.0))


def compute_ic_table(kg: KnowledgeGraph, mode: ICMode,
                     clusters: Optional[ClusterAssignment] = None,
                     normalization: Normalization = Normalization.LOG_SIZE,
                     kg_c: Optional[KnowledgeGraph] = None) -> ICTable:
    """
    Score every node of ``kg`` under the requested IC mode

    Args:
        kg: Graph to score (usually inverse-augmented)
        mode: IC, CIC or CIC_BY_RELATION
        clusters: Required for the clustered modes
        normalization: ``log_size`` divides by the largest attainable raw score
        kg_c: Pre-built clustered graph (built from ``clusters`` otherwise)

    Returns:
        ICTable with the normalization constant recorded
    """
    mode = ICMode(mode)
    normalization = Normalization(normalization)
    if len(kg) == 0:
        raise EmptyGraphError("Cannot compute IC on an empty graph")

    if mode is ICMode.IC:
        node_raw = _raw_from_degrees(kg.degrees, len(kg))
        z = math.log(len(kg))
        table = ICTable(mode=mode, z=z, node_raw=node_raw, normalization=normalization)
    else:
        if clusters is None:
            raise ContractViolation(f"{mode.value} requires a cluster assignment")
        if kg_c is None:
            kg_c = build_clustered_graph(kg, clusters)
        cluster_raw = _raw_from_degrees(kg_c.degrees, len(kg_c))
        node_raw = cluster_raw[clusters.labels[:kg.num_entities]]
        relation_raw = {}
        if mode is ICMode.CIC_BY_RELATION:
            cs, rs, counts = kg_c.relation_degree_table()
            for c, r, count in zip(cs.tolist(), rs.tolist(), counts.tolist()):
                relation_raw[(c, r)] = max(0.0, -math.log(count / kg_c.relation_size(r)))
        z = math.log(len(kg_c))
        table = ICTable(mode=mode, z=z, node_raw=node_raw, normalization=normalization,
                        relation_raw=relation_raw, cluster_labels=clusters.labels,
                        k=clusters.k, seed=clusters.seed)

    if normalization is Normalization.NONE:
        table.z = 1.0
    logger.info(f"Computed {mode.value} table over {kg.num_entities} entities (Z={table.z:.6g})")
    return table


# Edge and path relevance

def edge_ic(table: ICTable, t: Triple) -> float:
    """Mean of the two endpoint scores, normalized by the table constant"""
    relation = t.relation if table.mode is ICMode.CIC_BY_RELATION else None
    return 0.5 * (table.score(t.subject, relation) + table.score(t.object, relation))


def path_relevance(table: ICTable, path: Union[GraphPath, Sequence[Triple]]) -> float:
    """Arithmetic mean of edge_ic over the triples of a path"""
    triples = path.triples if isinstance(path, GraphPath) else path
    if len(triples) == 0:
        raise ContractViolation("Relevance of an empty path is undefined")
    return float(sum(edge_ic(table, t) for t in triples) / len(triples))


# Service

class InfoContentService:
    """
    IC tables for one graph under one ``info_content`` config

    Embeddings and clusters are computed at most once per service and shared
    by every mode requested from it.
    """

    def __init__(self, kg: KnowledgeGraph, settings: InfoContentConfig,
                 embeddings_path: Optional[Union[str, Path]] = None,
                 embedding_seed: int = 0, clustering_seed: int = 0):
        self.kg = kg
        self.settings = settings
        self.embeddings_path = Path(embeddings_path) if embeddings_path is not None else None
        self.embedding_seed = int(embedding_seed)
        self.clustering_seed = int(clustering_seed)
        self._clusters: Optional[ClusterAssignment] = None

    @property
    def can_cluster(self) -> bool:
        return self.embeddings_path is not None or self.settings.allow_fallback_embeddings

    def embeddings(self) -> EmbeddingTable:
        if self.embeddings_path is not None:
            return load_embeddings(self.embeddings_path, self.kg)
        if not self.settings.allow_fallback_embeddings:
            raise ConfigError("No embedding file given and fallback embeddings are disabled")
        return fallback_embeddings(self.kg, self.settings.embedding_dim, self.embedding_seed)

    def clusters(self) -> ClusterAssignment:
        if self._clusters is None:
            self._clusters = cluster_entities(self.embeddings(), self.settings.k, self.clustering_seed,
                                              self.settings.max_iters)
        return self._clusters

    def table(self, mode: Optional[ICMode] = None) -> Tuple[ICTable, Optional[ClusterAssignment]]:
        """IC table for ``mode`` (the configured mode by default) and the clusters it used"""
        mode = ICMode(mode or self.settings.mode)
        clusters = None if mode is ICMode.IC else self.clusters()
        table = compute_ic_table(self.kg, mode, clusters=clusters, normalization=self.settings.normalization)
        return table, clusters

    def fingerprint(self, mode: Optional[ICMode] = None) -> str:
        """
        Digest of everything a table for ``mode`` depends on

        Covers the IC settings, the graph triples and vocabulary and, for the
        clustered modes, the embedding file contents and the phase seeds.
        """
        mode = ICMode(mode or self.settings.mode)
        inputs = {"settings": self.settings.model_dump(mode="json", exclude={"mode"}), "mode": mode.value,
                  "vocabulary": vocabulary_hash(self.kg),
                  "triples": hashlib.sha256(np.ascontiguousarray(self.kg.triples).tobytes()).hexdigest()}
        if mode is not ICMode.IC:
            inputs["embeddings"] = (hashlib.sha256(self.embeddings_path.read_bytes()).hexdigest()
                                    if self.embeddings_path is not None else None)
            inputs["seeds"] = [self.embedding_seed, self.clustering_seed]
        return hashlib.sha256(json.dumps(inputs, sort_keys=True).encode("utf-8")).hexdigest()[:16]
