"""
Graph service: load, augment and query knowledge graphs and their splits
"""
import hashlib
import logging
from pathlib import Path
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Set, Tuple, Union

import numpy as np

from rex.application.schemas.config_schemas import DataConfig
from rex.core import Hypothesis, INVERSE_PREFIX, Triple, UNKNOWN_OBJECT, UNKNOWN_TYPE
from rex.domain.models.graph import KnowledgeGraph, NO_INVERSE
from rex.errors import DataError, EmptyGraphError, ParseError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def iter_lines(path: PathLike) -> Iterator[Tuple[int, str]]:
    """Yield (line number, text without the line break) for every line of a UTF-8 file"""
    path = Path(path)
    if not path.exists():
        raise DataError(f"File not found: {path}", path=str(path))
    with path.open("rb") as fh:
        for line_number, raw in enumerate(fh, start=1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise ParseError(f"invalid UTF-8 at byte {exc.start}", path=str(path),
                                 line_number=line_number) from None
            yield line_number, line.rstrip("\r\n")


def iter_records(path: PathLike, arity: int) -> Iterator[Tuple[int, List[str]]]:
    """Yield (line number, fields) for every data line of a tab-separated file.

    Blank lines and lines starting with ``#`` are skipped.
    """
    for line_number, line in iter_lines(path):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != arity or any(not f for f in fields):
            raise ParseError(f"expected {arity} tab-separated fields, got {len(fields)}",
                             path=str(path), line_number=line_number)
        yield line_number, fields


def _pair_declared_inverses(relation_labels: Sequence[str]) -> Tuple[List[int], List[bool]]:
    """Pair ``_inv_X`` with ``X`` when both labels are present"""
    index = {label: i for i, label in enumerate(relation_labels)}
    inverse = [NO_INVERSE] * len(relation_labels)
    is_inverse = [False] * len(relation_labels)
    for label, i in index.items():
        if label.startswith(INVERSE_PREFIX):
            base = index.get(label[len(INVERSE_PREFIX):])
            if base is not None:
                inverse[i], inverse[base] = base, i
                is_inverse[i] = True
    return inverse, is_inverse


def load_triples(path: PathLike) -> KnowledgeGraph:
    """
    Load a ``subject<TAB>relation<TAB>object`` file into an indexed graph

    Args:
        path: Triple file (UTF-8, ``#`` comments allowed)

    Returns:
        KnowledgeGraph with vocabularies in first-appearance order and
        duplicate triples collapsed
    """
    entity_index: Dict[str, int] = {}
    relation_index: Dict[str, int] = {}
    rows: List[Tuple[int, int, int]] = []
    for _, (s, r, o) in iter_records(path, 3):
        s_id = entity_index.setdefault(s, len(entity_index))
        r_id = relation_index.setdefault(r, len(relation_index))
        o_id = entity_index.setdefault(o, len(entity_index))
        rows.append((s_id, r_id, o_id))
    if not rows:
        raise EmptyGraphError(f"No triples found in {path}", path=str(path))

    relation_labels = list(relation_index)
    inverse, is_inverse = _pair_declared_inverses(relation_labels)
    kg = KnowledgeGraph.from_arrays(
        entity_labels=list(entity_index),
        relation_labels=relation_labels,
        triples=np.asarray(rows, dtype=np.int64),
        relation_inverse=inverse,
        relation_is_inverse=is_inverse,
    )
    logger.info(f"Loaded {len(kg)} triples over {kg.num_entities} entities and "
                f"{kg.num_relations} relations from {path}")
    return kg


def save_triples(kg: KnowledgeGraph, path: PathLike) -> None:
    """Write the graph in the triple file format (sorted by id)"""
    ents, rels = kg.entity_labels, kg.relation_labels
    with Path(path).open("w", encoding="utf-8") as fh:
        for s, r, o in kg.triples:
            fh.write(f"{ents[s]}\t{rels[r]}\t{ents[o]}\n")


def add_inverse_edges(kg: KnowledgeGraph, symmetric: Iterable[str] = ()) -> KnowledgeGraph:
    """
    Close the graph under inverse edges

    Every relation without a declared inverse gets a fresh ``_inv_<label>``
    relation; relations named in ``symmetric`` are their own inverse. The
    original triples are preserved and running the function twice adds
    nothing.

    Args:
        kg: Source graph
        symmetric: Relation labels that are declared self-inverse

    Returns:
        A new graph closed under inverses
    """
    symmetric = set(symmetric)
    labels = list(kg.relation_labels)
    index = {label: i for i, label in enumerate(labels)}
    inverse = [int(x) for x in kg.relation_inverse]
    is_inverse = [bool(x) for x in kg.relation_is_inverse]

    for r in range(kg.num_relations):
        if inverse[r] != NO_INVERSE:
            continue
        if labels[r] in symmetric:
            inverse[r] = r
            continue
        inv_label = INVERSE_PREFIX + labels[r]
        inv = index.get(inv_label)
        if inv is None:
            inv = len(labels)
            labels.append(inv_label)
            index[inv_label] = inv
            inverse.append(r)
            is_inverse.append(True)
        else:
            inverse[inv] = r
            is_inverse[inv] = True
        inverse[r] = inv

    triples = kg.triples
    mapping = np.asarray(inverse, dtype=np.int64)
    flipped = np.stack([triples[:, 2], mapping[triples[:, 1]], triples[:, 0]], axis=1)
    augmented = KnowledgeGraph.from_arrays(
        entity_labels=kg.entity_labels,
        relation_labels=labels,
        triples=np.concatenate([triples, flipped]),
        relation_inverse=inverse,
        relation_is_inverse=is_inverse,
        entity_types=kg.entity_types,
    )
    logger.info(f"Inverse closure: {len(kg)} -> {len(augmented)} triples, "
                f"{kg.num_relations} -> {augmented.num_relations} relations")
    return augmented


def load_entity_types(path: PathLike, kg: KnowledgeGraph) -> Tuple[Dict[int, str], List[str]]:
    """
    Read an ``entity<TAB>type`` file

    Args:
        path: Type file
        kg: Graph whose labels the file refers to

    Returns:
        (mapping entity id -> type for every entity, warnings for stale labels)
    """
    types: Dict[int, str] = {v: UNKNOWN_TYPE for v in range(kg.num_entities)}
    warnings: List[str] = []
    for line_number, (label, type_tag) in iter_records(path, 2):
        if not kg.has_entity(label):
            message = f"{path}:{line_number}: entity '{label}' is not in the graph"
            logger.warning(message)
            warnings.append(message)
            continue
        types[kg.entity_id(label)] = type_tag
    return types, warnings


def with_entity_types(kg: KnowledgeGraph, types: Dict[int, str]) -> KnowledgeGraph:
    """Copy of ``kg`` whose entities carry the given type tags"""
    return KnowledgeGraph.from_arrays(
        entity_labels=kg.entity_labels,
        relation_labels=kg.relation_labels,
        triples=kg.triples,
        relation_inverse=kg.relation_inverse,
        relation_is_inverse=kg.relation_is_inverse,
        entity_types=[types.get(v, UNKNOWN_TYPE) for v in range(kg.num_entities)],
    )


def load_split(path: PathLike, kg: KnowledgeGraph) -> List[Hypothesis]:
    """
    Load hypotheses (train/test split) from a triple file

    The object column may be ``?`` for inference-only hypotheses. Labels must
    resolve in ``kg``; duplicates are collapsed keeping first appearance.
    """
    hypotheses: List[Hypothesis] = []
    seen = set()
    for line_number, (s, r, o) in iter_records(path, 3):
        try:
            subject = kg.entity_id(s)
            relation = kg.relation_id(r)
            obj = None if o == UNKNOWN_OBJECT else kg.entity_id(o)
        except KeyError as exc:
            raise ParseError(str(exc), path=str(path), line_number=line_number) from None
        if obj == subject:
            raise ParseError("degenerate hypothesis: subject equals object",
                             path=str(path), line_number=line_number)
        key = (subject, relation, obj)
        if key in seen:
            continue
        seen.add(key)
        hypotheses.append(Hypothesis(subject=subject, relation=relation, object=obj))
    if not hypotheses:
        raise EmptyGraphError(f"No hypotheses found in {path}", path=str(path))
    logger.info(f"Loaded {len(hypotheses)} hypotheses from {path}")
    return hypotheses


def save_split(hypotheses: Sequence[Hypothesis], kg: KnowledgeGraph, path: PathLike) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for h in hypotheses:
            obj = UNKNOWN_OBJECT if h.object is None else kg.entity_labels[h.object]
            fh.write(f"{kg.entity_labels[h.subject]}\t{kg.relation_labels[h.relation]}\t{obj}\n")


def remove_triples(kg: KnowledgeGraph, triples: Iterable[Triple]) -> KnowledgeGraph:
    """Copy of ``kg`` without the given triples (used to hold out test edges)"""
    drop = {tuple(t) for t in triples}
    keep = [row for row in kg.triples.tolist() if tuple(row) not in drop]
    return KnowledgeGraph.from_arrays(
        entity_labels=kg.entity_labels,
        relation_labels=kg.relation_labels,
        triples=np.asarray(keep, dtype=np.int64).reshape(-1, 3),
        relation_inverse=kg.relation_inverse,
        relation_is_inverse=kg.relation_is_inverse,
        entity_types=kg.entity_types,
    )


def vocabulary_hash(kg: KnowledgeGraph) -> str:
    """Fingerprint of the entity and relation vocabularies (order-sensitive)"""
    digest = hashlib.sha256()
    for label in kg.entity_labels:
        digest.update(label.encode("utf-8") + b"\x00")
    digest.update(b"\x01")
    for label in kg.relation_labels:
        digest.update(label.encode("utf-8") + b"\x00")
    return digest.hexdigest()


def known_answers(triples: Iterable[Triple]) -> Dict[Tuple[int, int], set]:
    """Index (subject, relation) -> set of objects"""
    answers: Dict[Tuple[int, int], set] = {}
    for s, r, o in triples:
        answers.setdefault((int(s), int(r)), set()).add(int(o))
    return answers


def held_out_triples(kg: KnowledgeGraph, hypotheses: Sequence[Hypothesis]) -> List[Triple]:
    """Answered hypotheses as triples, together with their inverse edges"""
    triples = []
    for h in hypotheses:
        if h.object is None:
            continue
        triples.append(Triple(h.subject, h.relation, h.object))
        inverse = int(kg.relation_inverse[h.relation])
        if inverse != NO_INVERSE:
            triples.append(Triple(h.object, inverse, h.subject))
    return triples


@dataclass
class PreparedGraph:
    """The graph the agent walks plus the splits scored against it"""
    kg: KnowledgeGraph
    train: List[Hypothesis] = field(default_factory=list)
    test: List[Hypothesis] = field(default_factory=list)
    known: Dict[Tuple[int, int], Set[int]] = field(default_factory=dict)


class GraphService:
    """Builds the working graph described by a data config"""

    def __init__(self, data: DataConfig):
        self.data = data

    def load(self) -> KnowledgeGraph:
        kg = load_triples(self.data.triples)
        if self.data.add_inverses:
            kg = add_inverse_edges(kg, symmetric=self.data.symmetric_relations)
        if self.data.types is not None:
            types, _ = load_entity_types(self.data.types, kg)
            kg = with_entity_types(kg, types)
        return kg

    def prepare(self) -> PreparedGraph:
        """
        Load the graph and both splits

        Test edges and their inverses are removed from the graph. ``known``
        indexes every true triple, held-out ones included, for filtered ranking.
        """
        kg = self.load()
        train_h = load_split(self.data.train, kg) if self.data.train is not None else []
        test_h = load_split(self.data.test, kg) if self.data.test is not None else []
        answered = [Triple(h.subject, h.relation, h.object) for h in train_h + test_h if h.object is not None]
        known = known_answers(list(kg.iter_triples()) + answered)
        kg = remove_triples(kg, held_out_triples(kg, test_h))
        logger.info(f"Prepared {len(kg)} triples, {len(train_h)} train and {len(test_h)} test hypotheses")
        return PreparedGraph(kg=kg, train=train_h, test=test_h, known=known)
