"""
Explanation assembly: group explanatory paths by metapath, keep the most
relevant path of each group, merge them and enrich the result with the
lowest common ontology ancestors of consecutive entities.
"""
import logging
from collections import Counter
from itertools import combinations
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple, Union

import networkx as nx
import numpy as np

from rex.application.schemas.config_schemas import RewardConfig
from rex.application.services.beam_search import beam_search_paths
from rex.application.services.graph_service import iter_records
from rex.application.services.info_content_service import path_relevance
from rex.application.services.policy import PolicyParameters
from rex.application.services.trainer import sample_rollouts
from rex.core import Hypothesis, UNKNOWN_OBJECT, UNKNOWN_TYPE
from rex.domain.models.explanation import (
    EXPLAINED,
    NO_EXPLANATION,
    ClassNode,
    ExplanationStats,
    ExplanationSubgraph,
    Metapath,
    OntologyHierarchy,
    PathRecord,
    SubclassAxiom,
    TypeAxiom,
)
from rex.domain.models.graph import KnowledgeGraph
from rex.domain.models.info_content import ICTable
from rex.domain.models.trajectory import GraphPath
from rex.errors import ContractViolation, OntologyError

logger = logging.getLogger(__name__)

TypeMap = Union[Mapping[int, str], Sequence[str]]


def _type_of(types: Optional[TypeMap], kg: KnowledgeGraph, v: int) -> str:
    if types is None:
        return kg.entity_type(v)
    if isinstance(types, Mapping):
        return types.get(v, UNKNOWN_TYPE)
    return types[v]


def metapath_of(p: GraphPath, types: Optional[TypeMap], kg: KnowledgeGraph) -> Metapath:
    """Abstract a path to its alternating sequence of entity types and relation labels"""
    elements = [_type_of(types, kg, p.source)]
    for t in p.triples:
        elements.append(kg.relation_labels[t.relation])
        elements.append(_type_of(types, kg, t.object))
    return Metapath(elements=tuple(elements))


def _selection_key(p: GraphPath, relevance: float) -> Tuple:
    # highest relevance first, then the lexicographically smallest entity sequence
    return (-relevance, p.entities, tuple(t.relation for t in p.triples))


def group_and_select(paths: Iterable[GraphPath], ic_table: ICTable, types: Optional[TypeMap],
                     kg: KnowledgeGraph) -> Dict[Metapath, GraphPath]:
    """
    Most relevant path of each metapath group

    Ties on relevance go to the lexicographically smallest entity-id sequence.
    The result is ordered by metapath.
    """
    paths = list(paths)
    if not paths:
        raise ContractViolation("group_and_select needs at least one path")
    best: Dict[Metapath, Tuple[Tuple, GraphPath]] = {}
    for p in paths:
        metapath = metapath_of(p, types, kg)
        key = _selection_key(p, path_relevance(ic_table, p))
        if metapath not in best or key < best[metapath][0]:
            best[metapath] = (key, p)
    return {m: best[m][1] for m in sorted(best, key=lambda m: m.elements)}


# Ontology

def load_ontology(class_edges_path: Union[str, Path], annotations_path: Union[str, Path],
                  kg: KnowledgeGraph, class_labels_path: Optional[Union[str, Path]] = None) -> OntologyHierarchy:
    """
    Load the subclass DAG and the entity annotations

    Args:
        class_edges_path: ``child<TAB>parent`` file
        annotations_path: ``entity<TAB>class`` file (entity labels)
        kg: Graph the annotated entities belong to
        class_labels_path: Optional ``class<TAB>label`` file

    Returns:
        OntologyHierarchy; annotations of entities missing from ``kg`` are
        skipped with a warning
    """
    graph = nx.DiGraph()
    for _, (child, parent) in iter_records(class_edges_path, 2):
        graph.add_edge(child, parent)
    labels: Dict[str, str] = {}
    if class_labels_path is not None:
        for _, (cls, label) in iter_records(class_labels_path, 2):
            graph.add_node(cls)
            labels[cls] = label
    try:
        cycle = nx.find_cycle(graph)
    except nx.NetworkXNoCycle:
        cycle = None
    if cycle:
        member = cycle[0][0]
        raise OntologyError(f"Subclass cycle through class '{member}'", path=str(class_edges_path), cls=member)

    annotations: Dict[int, Set[str]] = {}
    for line_number, (entity, cls) in iter_records(annotations_path, 2):
        if cls not in graph:
            raise OntologyError(f"{annotations_path}:{line_number}: unknown class '{cls}'",
                                path=str(annotations_path), line_number=line_number)
        if not kg.has_entity(entity):
            logger.warning(f"{annotations_path}:{line_number}: entity '{entity}' is not in the graph")
            continue
        annotations.setdefault(kg.entity_id(entity), set()).add(cls)
    logger.info(f"Ontology: {graph.number_of_nodes()} classes, {graph.number_of_edges()} subclass edges, "
                f"{len(annotations)} annotated entities")
    return OntologyHierarchy(graph=graph, annotations={e: frozenset(c) for e, c in annotations.items()},
                             class_labels=labels)


def lca(ont: OntologyHierarchy, e1: int, e2: int) -> Set[str]:
    """Minimal common ancestors of the annotation classes of two entities"""
    common = ont.entity_ancestors(e1) & ont.entity_ancestors(e2)
    # a common ancestor is lowest when none of its proper subclasses is common too
    return {c for c in common if not any(d != c and c in ont.ancestors(d) for d in common)}


# Assembly

def _as_selection(selected: Union[Mapping[Metapath, GraphPath], Sequence[GraphPath]],
                  kg: KnowledgeGraph) -> List[Tuple[Metapath, GraphPath]]:
    if isinstance(selected, Mapping):
        return list(selected.items())
    return [(metapath_of(p, None, kg), p) for p in selected]


def build_explanation(selected: Union[Mapping[Metapath, GraphPath], Sequence[GraphPath]],
                      ont: Optional[OntologyHierarchy], kg: KnowledgeGraph,
                      hypothesis: Optional[Hypothesis] = None,
                      ic_table: Optional[ICTable] = None) -> ExplanationSubgraph:
    """
    Merge selected paths and add LCA classes of consecutive entities

    Args:
        selected: Output of ``group_and_select`` or a plain list of paths
        ont: Ontology used for enrichment; None skips it
        kg: Graph supplying labels
        hypothesis: Hypothesis being explained
        ic_table: Scores the recorded path relevance (0 when absent)

    Returns:
        ExplanationSubgraph; empty, with status "no explanation found", when
        nothing is selected
    """
    pairs = _as_selection(selected, kg)
    document = ExplanationSubgraph(hypothesis=_hypothesis_labels(hypothesis, kg))
    if not pairs:
        return document

    records, class_ids, type_axioms = [], set(), set()
    for metapath, p in pairs:
        relevance = path_relevance(ic_table, p) if ic_table is not None and len(p) else 0.0
        records.append(PathRecord(metapath=metapath.to_line(),
                                  triples=tuple(kg.triple_labels(t) for t in p.triples),
                                  relevance=relevance))
        if ont is None:
            continue
        entities = p.entities
        for a, b in zip(entities, entities[1:]):
            for cls in lca(ont, a, b):
                class_ids.add(cls)
                type_axioms.add((kg.entity_labels[a], cls))
                type_axioms.add((kg.entity_labels[b], cls))

    subclass_axioms = []
    if ont is not None:
        subclass_axioms = sorted((c, p) for c, p in _ordered_pairs(class_ids) if ont.is_direct_subclass(c, p))
    document.paths = records
    document.classes = [ClassNode(id=c, label=ont.label(c)) for c in sorted(class_ids)]
    document.axioms = ([TypeAxiom(entity=e, class_=c) for e, c in sorted(type_axioms)]
                       + [SubclassAxiom(child=c, parent=p) for c, p in subclass_axioms])
    document.status = EXPLAINED
    return document


def _ordered_pairs(classes: Set[str]) -> Iterable[Tuple[str, str]]:
    for a, b in combinations(sorted(classes), 2):
        yield a, b
        yield b, a


def _hypothesis_labels(h: Optional[Hypothesis], kg: KnowledgeGraph) -> Optional[Tuple[str, str, str]]:
    if h is None:
        return None
    obj = UNKNOWN_OBJECT if h.object is None else kg.entity_labels[h.object]
    return kg.entity_labels[h.subject], kg.relation_labels[h.relation], obj


# Batch explanation

def _restates_hypothesis(p: GraphPath, h: Hypothesis, kg: KnowledgeGraph) -> bool:
    if len(p) != 1:
        return False
    t = p.triples[0]
    inverse = int(kg.relation_inverse[h.relation])
    return (t.subject, t.relation, t.object) == (h.subject, h.relation, h.object) or \
        (t.subject, t.relation, t.object) == (h.object, inverse, h.subject)


def collect_explanatory_paths(kg: KnowledgeGraph, params: PolicyParameters, h: Hypothesis,
                              cfg: RewardConfig, beam_width: int, rollouts: int = 0,
                              seed: int = 0) -> List[GraphPath]:
    """
    Distinct successful paths from s_h to o_h found by beam decoding and,
    optionally, extra sampled rollouts
    """
    if h.object is None:
        return []
    found: Dict[Tuple, GraphPath] = {}
    entries = beam_search_paths(kg, params, h.subject, h.relation, beam_width, cfg.max_len,
                                include_arrivals=cfg.use_early_stop)
    for entry in entries:
        if entry.path.target == h.object:
            found.setdefault(entry.path.triples, entry.path)
    if rollouts > 0:
        rollout_cfg = cfg.model_copy(update={"rollouts": rollouts, "use_relevance": False})
        for traj in sample_rollouts(kg, params, h, rollout_cfg, rng=np.random.default_rng(seed),
                                    mask_hypothesis_edge=False):
            if traj.success:
                path = traj.to_path()
                found.setdefault(path.triples, path)
    return [p for p in found.values() if not _restates_hypothesis(p, h, kg)]


def explain_hypotheses(kg: KnowledgeGraph, params: PolicyParameters, hypotheses: Sequence[Hypothesis],
                       cfg: RewardConfig, ic_table: ICTable, ont: Optional[OntologyHierarchy] = None,
                       beam_width: int = 20, rollouts: int = 0,
                       seed: int = 0) -> Tuple[List[ExplanationSubgraph], ExplanationStats]:
    """
    Explain every hypothesis and summarize the metapath distribution

    Returns:
        (one subgraph per hypothesis in input order, batch statistics)
    """
    documents: List[ExplanationSubgraph] = []
    counts: Counter = Counter()
    path_counts: List[int] = []
    seeds = np.random.SeedSequence(seed).spawn(len(hypotheses))
    for h, seq in zip(hypotheses, seeds):
        paths = collect_explanatory_paths(kg, params, h, cfg, beam_width, rollouts,
                                          seed=int(seq.generate_state(1)[0]))
        path_counts.append(len(paths))
        for p in paths:
            counts[metapath_of(p, None, kg).to_line()] += 1
        selected = group_and_select(paths, ic_table, None, kg) if paths else {}
        documents.append(build_explanation(selected, ont, kg, h, ic_table))
    explained = sum(1 for d in documents if not d.is_empty)
    stats = ExplanationStats(
        hypotheses=len(hypotheses),
        explained=explained,
        mean_paths_per_hypothesis=float(np.mean(path_counts)) if path_counts else 0.0,
        metapath_counts=dict(sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))),
    )
    logger.info(f"Explained {explained}/{len(hypotheses)} hypotheses, "
                f"{stats.mean_paths_per_hypothesis:.2f} paths each, {len(counts)} metapaths")
    return documents, stats
