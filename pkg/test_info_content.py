"""Test node IC, clustered IC, edge and path relevance"""
import math

import numpy as np
import pytest

from conftest import graph_from_labels, random_graph
from rex.application.services.info_content_service import (
    build_clustered_graph,
    clustered_node_ic,
    clustered_node_ic_by_relation,
    compute_ic_table,
    edge_ic,
    fallback_embeddings,
    load_embeddings,
    node_ic,
    path_relevance,
    relation_profile,
)
from rex.core import ICMode, Normalization, Triple
from rex.domain.models.info_content import ClusterAssignment, ICTable
from rex.errors import ContractViolation, CoverageError, ParseError, UndefinedICError
from rex.infrastructure.storage import load_clusters, load_ic_table, save_clusters, save_ic_table


N_GRAPHS = 50
ORACLE_TOL = 1e-12


def _random_clusters(rng, n, k, seed=0):
    labels = rng.integers(k, size=n)
    labels[:k] = np.arange(k)
    return ClusterAssignment(labels=labels, k=k, seed=seed)


def _clustered_triples(kg, clusters):
    return {(int(clusters.labels[s]), r, int(clusters.labels[o])) for s, r, o in kg.triple_set()}


def _oracle_edge_scores(kg, mode, clusters=None):
    """Normalized endpoint scores of every edge, counted straight from the triple sets"""
    if mode is ICMode.IC:
        triples, cluster_of = kg.triple_set(), list(range(kg.num_entities))
    else:
        triples, cluster_of = _clustered_triples(kg, clusters), [int(c) for c in clusters.labels]
    z = math.log(len(triples))

    def normalized(count, total):
        return min(max(-math.log(count / total) / z, 0.0), 1.0) if z > 0 else 0.0

    def score(v, r):
        c = cluster_of[v]
        if mode is ICMode.CIC_BY_RELATION:
            deg = sum((s == c) + (o == c) for s, rr, o in triples if rr == r)
            if deg:
                return normalized(deg, sum(1 for _, rr, _ in triples if rr == r))
        return normalized(sum((s == c) + (o == c) for s, _, o in triples), len(triples))

    return {(s, r, o): 0.5 * (score(s, r) + score(o, r)) for s, r, o in kg.triple_set()}


def test_node_ic_formula():
    """degree 5 in a 100-triple graph gives ln 20"""
    triples = [("hub", "r", f"x{i}") for i in range(5)]
    triples += [(f"a{i}", "r", f"b{i}") for i in range(95)]
    kg = graph_from_labels(triples)
    assert len(kg) == 100
    assert node_ic(kg, kg.entity_id("hub")) == pytest.approx(math.log(20), abs=1e-4)
    assert node_ic(kg, kg.entity_id("hub")) == pytest.approx(2.9957, abs=1e-4)


def test_node_ic_isolated_node_is_undefined():
    kg = graph_from_labels([("a", "r", "b")], extra_entities=["lonely"])
    with pytest.raises(UndefinedICError):
        node_ic(kg, kg.entity_id("lonely"))


def test_node_ic_matches_oracle_on_random_graphs():
    for seed in range(N_GRAPHS):
        rng = np.random.default_rng(seed)
        kg = random_graph(rng, 20, 3, 80)
        triples = kg.triple_set()
        for v in range(kg.num_entities):
            deg = sum((s == v) + (o == v) for s, _, o in triples)
            if deg:
                assert node_ic(kg, v) == pytest.approx(-math.log(deg / len(triples)), abs=ORACLE_TOL)
            else:
                with pytest.raises(UndefinedICError):
                    node_ic(kg, v)


def test_singleton_clusters_reproduce_plain_ic():
    """With every entity in its own cluster CIC equals IC"""
    rng = np.random.default_rng(1)
    kg = random_graph(rng, 15, 3, 50)
    clusters = ClusterAssignment(labels=np.arange(kg.num_entities), k=kg.num_entities, seed=0)
    kg_c = build_clustered_graph(kg, clusters)
    for v in range(kg.num_entities):
        if kg.degree(v):
            assert clustered_node_ic(kg_c, clusters, v) == pytest.approx(node_ic(kg, v))


def test_single_cluster_with_self_loop():
    """All entities in one cluster collapse to a self-loop counted twice"""
    kg = graph_from_labels([("a", "r", "b"), ("b", "r", "c"), ("c", "r", "a")])
    clusters = ClusterAssignment(labels=np.zeros(3, dtype=np.int64), k=1, seed=0)
    kg_c = build_clustered_graph(kg, clusters)
    assert len(kg_c) == 1
    assert clustered_node_ic(kg_c, clusters, 0) == pytest.approx(-math.log(2))
    table = compute_ic_table(kg, ICMode.CIC, clusters)
    assert table.raw_score(0) == 0.0


def test_clustered_graph_matches_set_comprehension():
    for seed in range(N_GRAPHS):
        rng = np.random.default_rng(seed)
        kg = random_graph(rng, 30, 4, 120)
        clusters = _random_clusters(rng, kg.num_entities, 5)
        kg_c = build_clustered_graph(kg, clusters)
        assert {tuple(t) for t in kg_c.triple_set()} == _clustered_triples(kg, clusters)
        assert kg_c.num_entities == 5
        assert kg_c.relation_labels == kg.relation_labels


def test_clustered_graph_requires_full_coverage():
    kg = graph_from_labels([("a", "r", "b"), ("b", "r", "c")])
    with pytest.raises(CoverageError):
        build_clustered_graph(kg, ClusterAssignment(labels=[0, 1], k=2, seed=0))


def test_clustered_node_ic_matches_oracle():
    for seed in range(N_GRAPHS):
        rng = np.random.default_rng(1000 + seed)
        kg = random_graph(rng, 25, 3, 100)
        clusters = _random_clusters(rng, kg.num_entities, 4)
        kg_c = build_clustered_graph(kg, clusters)
        gc = _clustered_triples(kg, clusters)
        for v in range(kg.num_entities):
            c = clusters.cluster_of(v)
            deg = sum((s == c) + (o == c) for s, _, o in gc)
            expected = -math.log(deg / len(gc))
            assert clustered_node_ic(kg_c, clusters, v) == pytest.approx(expected, abs=ORACLE_TOL)


def test_clustered_node_ic_by_relation_formula():
    """degree 2 under r among 8 clustered r-triples gives ln 4"""
    triples = [("u", "r", "w0"), ("w1", "r", "u")]
    triples += [(f"p{i}", "r", f"q{i}") for i in range(6)]
    kg = graph_from_labels(triples)
    clusters = ClusterAssignment(labels=np.arange(kg.num_entities), k=kg.num_entities, seed=0)
    kg_c = build_clustered_graph(kg, clusters)
    r = kg.relation_id("r")
    assert kg_c.relation_size(r) == 8
    value = clustered_node_ic_by_relation(kg_c, clusters, kg.entity_id("u"), r)
    assert value == pytest.approx(1.3863, abs=1e-4)


def test_clustered_node_ic_by_relation_matches_oracle():
    for seed in range(N_GRAPHS):
        rng = np.random.default_rng(2000 + seed)
        kg = random_graph(rng, 25, 3, 100)
        clusters = _random_clusters(rng, kg.num_entities, 4)
        kg_c = build_clustered_graph(kg, clusters)
        gc = _clustered_triples(kg, clusters)
        for v in range(kg.num_entities):
            c = clusters.cluster_of(v)
            for r in range(kg.num_relations):
                n_r = sum(1 for _, rr, _ in gc if rr == r)
                deg = sum((s == c) + (o == c) for s, rr, o in gc if rr == r)
                if deg == 0:
                    with pytest.raises(UndefinedICError):
                        clustered_node_ic_by_relation(kg_c, clusters, v, r)
                else:
                    value = clustered_node_ic_by_relation(kg_c, clusters, v, r)
                    assert value == pytest.approx(-math.log(deg / n_r), abs=ORACLE_TOL)


def test_ic_table_scores_are_normalized():
    rng = np.random.default_rng(5)
    kg = random_graph(rng, 30, 3, 90)
    table = compute_ic_table(kg, ICMode.IC)
    assert table.z == pytest.approx(math.log(len(kg)))
    for v, _, raw, norm in table.rows():
        assert 0.0 <= norm <= 1.0
        assert norm == pytest.approx(raw / table.z)


def test_cic_by_relation_table_rows():
    """One row per (entity, relation) present at the entity's cluster"""
    rng = np.random.default_rng(6)
    kg = random_graph(rng, 20, 3, 60)
    clusters = _random_clusters(rng, kg.num_entities, 4)
    table = compute_ic_table(kg, ICMode.CIC_BY_RELATION, clusters)
    kg_c = build_clustered_graph(kg, clusters)
    expected = sum(1 for v in range(kg.num_entities) for r in range(kg.num_relations)
                   if kg_c.degree_by_relation(clusters.cluster_of(v), r) > 0)
    assert len(list(table.rows())) == expected
    assert table.z == pytest.approx(math.log(len(kg_c)))


def test_cic_by_relation_falls_back_to_node_score():
    kg = graph_from_labels([("a", "r", "b"), ("c", "s", "d"), ("b", "s", "d")])
    clusters = ClusterAssignment(labels=np.arange(4), k=4, seed=0)
    table = compute_ic_table(kg, ICMode.CIC_BY_RELATION, clusters)
    a, r, s = kg.entity_id("a"), kg.relation_id("r"), kg.relation_id("s")
    assert table.raw_score(a, s) == table.raw_score(a)
    assert table.raw_score(a, r) == pytest.approx(0.0)


def test_clustered_modes_need_clusters(chain_kg):
    with pytest.raises(ContractViolation):
        compute_ic_table(chain_kg, ICMode.CIC)


def test_edge_ic_is_endpoint_mean():
    kg = graph_from_labels([("a", "r", "b"), ("b", "r", "c"), ("c", "r", "d"), ("a", "r", "d")])
    table = compute_ic_table(kg, ICMode.IC)
    t = Triple(kg.entity_id("a"), kg.relation_id("r"), kg.entity_id("b"))
    x, y = node_ic(kg, t.subject), node_ic(kg, t.object)
    assert edge_ic(table, t) == pytest.approx((x + y) / (2 * math.log(len(kg))))


def test_path_relevance_is_mean_of_edges():
    kg = graph_from_labels([("a", "r", "b"), ("b", "s", "c"), ("a", "s", "c"), ("c", "r", "d")])
    table = compute_ic_table(kg, ICMode.IC)
    path = [Triple(0, 0, 1), Triple(1, 1, 2), Triple(2, 0, 3)]
    # degrees a=2 b=2 c=3 d=1 over four triples
    node = {0: math.log(2), 1: math.log(2), 2: math.log(4 / 3), 3: math.log(4)}
    expected = sum((node[t.subject] + node[t.object]) / 2 for t in path) / (3 * math.log(4))
    assert path_relevance(table, path) == pytest.approx(expected, abs=ORACLE_TOL)
    assert 0.0 <= path_relevance(table, path) <= 1.0
    with pytest.raises(ContractViolation):
        path_relevance(table, [])


@pytest.mark.parametrize("mode", list(ICMode))
def test_edge_and_path_relevance_match_oracle(mode):
    """Every edge score, and the relevance of random walks, recounted from the triples"""
    for seed in range(N_GRAPHS):
        rng = np.random.default_rng(3000 + seed)
        kg = random_graph(rng, 20, 3, 70)
        clusters = None if mode is ICMode.IC else _random_clusters(rng, kg.num_entities, 4)
        table = compute_ic_table(kg, mode, clusters)
        oracle = _oracle_edge_scores(kg, mode, clusters)
        for (s, r, o), expected in oracle.items():
            assert edge_ic(table, Triple(int(s), int(r), int(o))) == pytest.approx(expected, abs=ORACLE_TOL)
        edges = sorted(oracle)
        for _ in range(5):
            picks = rng.integers(len(edges), size=int(rng.integers(1, 4)))
            path = [Triple(*map(int, edges[i])) for i in picks]
            expected = sum(oracle[edges[i]] for i in picks) / len(picks)
            assert path_relevance(table, path) == pytest.approx(expected, abs=ORACLE_TOL)


def test_unnormalized_table_keeps_raw_scores(chain_kg):
    table = compute_ic_table(chain_kg, ICMode.IC, normalization=Normalization.NONE)
    assert table.z == 1.0
    assert table.score(0) == pytest.approx(table.raw_score(0))


def test_fallback_embeddings_share_profiles():
    """Entities with the same relation-degree profile get the same vector"""
    kg = graph_from_labels([("a", "r", "x"), ("b", "r", "y"), ("x", "s", "z")])
    emb = fallback_embeddings(kg, d=8, seed=0)
    assert np.allclose(emb[kg.entity_id("a")], emb[kg.entity_id("b")])
    assert not np.allclose(emb[kg.entity_id("a")], emb[kg.entity_id("x")])
    other = fallback_embeddings(kg, d=8, seed=1)
    assert not np.allclose(emb.vectors, other.vectors)


def test_relation_profile_matches_recount():
    rng = np.random.default_rng(7)
    kg = random_graph(rng, 15, 3, 40)
    profile = relation_profile(kg)
    for v in range(kg.num_entities):
        for r in range(kg.num_relations):
            count = sum((s == v) + (o == v) for s, rr, o in kg.triple_set() if rr == r)
            assert profile[v, r] == count


def test_load_embeddings(write_lines, chain_kg):
    path = write_lines("emb.tsv", ["a\t1 2", "b\t3 4", "zzz\t9 9"])
    emb = load_embeddings(path, chain_kg)
    assert emb.dimension == 2
    assert np.allclose(emb[chain_kg.entity_id("c")], [2.0, 3.0])
    with pytest.raises(ParseError):
        load_embeddings(write_lines("bad.tsv", ["a\t1 2", "b\t3"]), chain_kg)


def test_cluster_and_ic_files_reload(tmp_path):
    rng = np.random.default_rng(8)
    kg = random_graph(rng, 20, 3, 60)
    clusters = _random_clusters(rng, kg.num_entities, 4, seed=11)
    save_clusters(clusters, kg, tmp_path / "clusters.tsv")
    reloaded = load_clusters(tmp_path / "clusters.tsv", kg)
    assert np.array_equal(reloaded.labels, clusters.labels)
    assert (reloaded.k, reloaded.seed) == (4, 11)

    for mode in ICMode:
        table = compute_ic_table(kg, mode, clusters if mode is not ICMode.IC else None)
        path = tmp_path / f"ic_{mode.value}.tsv"
        save_ic_table(table, kg, path)
        loaded = load_ic_table(path, kg, reloaded)
        assert isinstance(loaded, ICTable)
        assert loaded.mode is mode
        assert loaded.z == table.z
        for t in kg.iter_triples():
            assert edge_ic(loaded, t) == edge_ic(table, t)
