"""Shared fixtures: toy graphs, random graphs and file writers"""
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pytest

from rex.application.services.graph_service import add_inverse_edges
from rex.core import Hypothesis
from rex.domain.models.graph import KnowledgeGraph


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="Run tests marked slow")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: large-scale tests, skipped unless --run-slow is given")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def graph_from_labels(triples: Iterable[Tuple[str, str, str]],
                      types: Optional[Dict[str, str]] = None,
                      extra_entities: Sequence[str] = ()) -> KnowledgeGraph:
    """In-memory graph with first-appearance ids, like the loader builds"""
    entities: Dict[str, int] = {}
    relations: Dict[str, int] = {}
    rows = []
    for s, r, o in triples:
        s_id = entities.setdefault(s, len(entities))
        r_id = relations.setdefault(r, len(relations))
        o_id = entities.setdefault(o, len(entities))
        rows.append((s_id, r_id, o_id))
    for label in extra_entities:
        entities.setdefault(label, len(entities))
    labels = list(entities)
    entity_types = [types.get(e, "Unknown") for e in labels] if types else None
    return KnowledgeGraph.from_arrays(labels, list(relations), np.asarray(rows, dtype=np.int64).reshape(-1, 3),
                                      entity_types=entity_types)


def random_graph(rng: np.random.Generator, n_entities: int, n_relations: int, n_triples: int) -> KnowledgeGraph:
    triples = np.stack([
        rng.integers(n_entities, size=n_triples),
        rng.integers(n_relations, size=n_triples),
        rng.integers(n_entities, size=n_triples),
    ], axis=1)
    return KnowledgeGraph.from_arrays([f"e{i}" for i in range(n_entities)],
                                      [f"r{i}" for i in range(n_relations)], triples)


def hypothesis(kg: KnowledgeGraph, s: str, r: str, o: Optional[str]) -> Hypothesis:
    return Hypothesis(subject=kg.entity_id(s), relation=kg.relation_id(r),
                      object=None if o is None else kg.entity_id(o))


def planted_graph(seed: int = 0, n_pairs: int = 10, n_distractors: int = 30,
                  distractor_edges: int = 10) -> Tuple[KnowledgeGraph, List[Hypothesis], List[Hypothesis]]:
    """
    Drugs d_i bind genes g_i, which are associated with diseases x_i; the
    hypothesis (d_i, treats, x_i) is always explained by d_i -binds-> g_i
    -assoc-> x_i. Every drug and gene also has ``distractor_edges`` edges to
    distractor nodes. Half the treats edges are training hypotheses (kept in
    the graph), half are held out for testing.
    """
    rng = np.random.default_rng(seed)
    triples = []
    for i in range(n_pairs):
        triples.append((f"d{i}", "binds", f"g{i}"))
        triples.append((f"g{i}", "assoc", f"x{i}"))
    relations = ["interacts", "expresses", "resembles"]
    for node in [f"d{i}" for i in range(n_pairs)] + [f"g{i}" for i in range(n_pairs)]:
        targets = rng.choice(n_distractors, size=distractor_edges, replace=False)
        for t in targets:
            triples.append((node, relations[int(rng.integers(len(relations)))], f"n{int(t)}"))
    train_pairs = list(range(0, n_pairs, 2))
    test_pairs = list(range(1, n_pairs, 2))
    for i in train_pairs:
        triples.append((f"d{i}", "treats", f"x{i}"))
    types = {f"d{i}": "Compound" for i in range(n_pairs)}
    types.update({f"g{i}": "Gene" for i in range(n_pairs)})
    types.update({f"x{i}": "Disease" for i in range(n_pairs)})
    labels = [f"d{i}" for i in range(n_pairs)] + [f"g{i}" for i in range(n_pairs)] \
        + [f"x{i}" for i in range(n_pairs)] + [f"n{i}" for i in range(n_distractors)]
    kg = graph_from_labels(triples, types, extra_entities=labels)
    kg = add_inverse_edges(kg)
    if not kg.has_relation("treats"):
        raise AssertionError("planted graph must contain the treats relation")
    train = [hypothesis(kg, f"d{i}", "treats", f"x{i}") for i in train_pairs]
    test = [hypothesis(kg, f"d{i}", "treats", f"x{i}") for i in test_pairs]
    return kg, train, test


@pytest.fixture
def write_lines(tmp_path: Path):
    """Factory writing text lines to a file under tmp_path"""
    def _write(name: str, lines: Iterable[str]) -> Path:
        path = tmp_path / name
        path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        return path
    return _write


@pytest.fixture
def chain_kg() -> KnowledgeGraph:
    """a -r-> b -r-> c"""
    return graph_from_labels([("a", "r", "b"), ("b", "r", "c")])


@pytest.fixture
def toy_kg() -> KnowledgeGraph:
    """Small typed graph with two routes from the drug to the disease"""
    return graph_from_labels(
        [
            ("drug", "binds", "gene1"),
            ("gene1", "assoc", "disease"),
            ("drug", "binds", "gene2"),
            ("gene2", "assoc", "disease"),
            ("drug", "resembles", "drug2"),
            ("drug2", "treats", "disease"),
        ],
        types={"drug": "Compound", "drug2": "Compound", "gene1": "Gene", "gene2": "Gene", "disease": "Disease"},
    )
