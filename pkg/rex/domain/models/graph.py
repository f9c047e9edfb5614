"""Indexed, immutable knowledge graph"""
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Set, Tuple

import numpy as np

from rex.core import Entity, Relation, Triple, UNKNOWN_TYPE
from rex.errors import ContractViolation, UnknownEntityError, UnknownRelationError

NO_INVERSE = -1


def _unique_rows(triples: np.ndarray, n_entities: int, n_relations: int) -> np.ndarray:
    """Sort (s, r, o) rows lexicographically and drop duplicates"""
    if len(triples) == 0:
        return triples.reshape(0, 3)
    span = max(n_entities, 1)
    if span * span * max(n_relations, 1) < 2 ** 62:
        keys = (triples[:, 0] * n_relations + triples[:, 1]) * span + triples[:, 2]
        keys = np.unique(keys)
        o = keys % span
        rest = keys // span
        return np.stack([rest // n_relations, rest % n_relations, o], axis=1).astype(np.int64)
    return np.unique(triples, axis=0).astype(np.int64)


@dataclass(frozen=True, eq=False)
class KnowledgeGraph:
    """Entity/relation vocabularies plus a duplicate-free triple set.

    Triples are stored sorted by (subject, relation, object), which makes the
    subject slice of the array the adjacency list of that subject. The graph
    never changes after construction, so it can be shared between workers.
    Also used for the clustered graph, whose entities are cluster ids.
    """
    entity_labels: Tuple[str, ...]
    relation_labels: Tuple[str, ...]
    triples: np.ndarray
    relation_inverse: np.ndarray
    relation_is_inverse: np.ndarray
    entity_types: Optional[Tuple[str, ...]] = None
    _entity_index: Dict[str, int] = field(init=False, repr=False)
    _relation_index: Dict[str, int] = field(init=False, repr=False)
    _offsets: np.ndarray = field(init=False, repr=False)
    _degree: np.ndarray = field(init=False, repr=False)
    _relation_degree_keys: np.ndarray = field(init=False, repr=False)
    _relation_degree_counts: np.ndarray = field(init=False, repr=False)
    _relation_sizes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        n_ent, n_rel = len(self.entity_labels), len(self.relation_labels)
        entity_index = {label: i for i, label in enumerate(self.entity_labels)}
        relation_index = {label: i for i, label in enumerate(self.relation_labels)}
        if len(entity_index) != n_ent:
            raise ContractViolation("Entity labels must be unique")
        if len(relation_index) != n_rel:
            raise ContractViolation("Relation labels must be unique")
        if self.entity_types is not None and len(self.entity_types) != n_ent:
            raise ContractViolation("entity_types must have one entry per entity")

        triples = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)
        if len(triples) and (triples.min() < 0 or triples[:, [0, 2]].max() >= n_ent
                             or triples[:, 1].max() >= n_rel):
            raise ContractViolation("Triple ids do not resolve in the vocabularies")
        triples = _unique_rows(triples, n_ent, n_rel)
        triples.setflags(write=False)

        subjects, relations, objects = triples[:, 0], triples[:, 1], triples[:, 2]
        offsets = np.zeros(n_ent + 1, dtype=np.int64)
        np.cumsum(np.bincount(subjects, minlength=n_ent), out=offsets[1:])
        degree = np.bincount(subjects, minlength=n_ent) + np.bincount(objects, minlength=n_ent)
        keys = np.concatenate([subjects * n_rel + relations, objects * n_rel + relations])
        rel_keys, rel_counts = np.unique(keys, return_counts=True)

        setattr_ = object.__setattr__
        setattr_(self, "triples", triples)
        setattr_(self, "relation_inverse", np.asarray(self.relation_inverse, dtype=np.int64))
        setattr_(self, "relation_is_inverse", np.asarray(self.relation_is_inverse, dtype=bool))
        setattr_(self, "_entity_index", entity_index)
        setattr_(self, "_relation_index", relation_index)
        setattr_(self, "_offsets", offsets)
        setattr_(self, "_degree", degree.astype(np.int64))
        setattr_(self, "_relation_degree_keys", rel_keys.astype(np.int64))
        setattr_(self, "_relation_degree_counts", rel_counts.astype(np.int64))
        setattr_(self, "_relation_sizes", np.bincount(relations, minlength=n_rel).astype(np.int64))

    @classmethod
    def from_arrays(cls, entity_labels: Sequence[str], relation_labels: Sequence[str],
                    triples: np.ndarray,
                    relation_inverse: Optional[Sequence[int]] = None,
                    relation_is_inverse: Optional[Sequence[bool]] = None,
                    entity_types: Optional[Sequence[str]] = None) -> "KnowledgeGraph":
        n_rel = len(relation_labels)
        return cls(
            entity_labels=tuple(entity_labels),
            relation_labels=tuple(relation_labels),
            triples=np.asarray(triples, dtype=np.int64).reshape(-1, 3),
            relation_inverse=np.asarray(
                relation_inverse if relation_inverse is not None else [NO_INVERSE] * n_rel,
                dtype=np.int64),
            relation_is_inverse=np.asarray(
                relation_is_inverse if relation_is_inverse is not None else [False] * n_rel,
                dtype=bool),
            entity_types=tuple(entity_types) if entity_types is not None else None,
        )

    # Vocabulary

    @property
    def num_entities(self) -> int:
        return len(self.entity_labels)

    @property
    def num_relations(self) -> int:
        return len(self.relation_labels)

    def __len__(self) -> int:
        return int(self.triples.shape[0])

    def _check_entity(self, v: int) -> int:
        if not 0 <= int(v) < self.num_entities:
            raise UnknownEntityError(f"Unknown entity id {v}")
        return int(v)

    def _check_relation(self, r: int) -> int:
        if not 0 <= int(r) < self.num_relations:
            raise UnknownRelationError(f"Unknown relation id {r}")
        return int(r)

    def entity_id(self, label: str) -> int:
        try:
            return self._entity_index[label]
        except KeyError:
            raise UnknownEntityError(f"Unknown entity label '{label}'") from None

    def relation_id(self, label: str) -> int:
        try:
            return self._relation_index[label]
        except KeyError:
            raise UnknownRelationError(f"Unknown relation label '{label}'") from None

    def has_entity(self, label: str) -> bool:
        return label in self._entity_index

    def has_relation(self, label: str) -> bool:
        return label in self._relation_index

    def entity(self, v: int) -> Entity:
        v = self._check_entity(v)
        type_tag = self.entity_types[v] if self.entity_types is not None else None
        return Entity(id=v, label=self.entity_labels[v], type_tag=type_tag)

    def relation(self, r: int) -> Relation:
        r = self._check_relation(r)
        inverse = int(self.relation_inverse[r])
        return Relation(
            id=r,
            label=self.relation_labels[r],
            is_inverse=bool(self.relation_is_inverse[r]),
            inverse_of=inverse if inverse != NO_INVERSE else None,
        )

    def entity_type(self, v: int) -> str:
        v = self._check_entity(v)
        if self.entity_types is None:
            return UNKNOWN_TYPE
        return self.entity_types[v]

    # Adjacency and degrees

    def neighbors(self, v: int) -> List[Tuple[int, int]]:
        """Outgoing edges of ``v`` as (relation, object), ordered by relation then object"""
        v = self._check_entity(v)
        block = self.triples[self._offsets[v]:self._offsets[v + 1]]
        return [(int(r), int(o)) for r, o in block[:, 1:]]

    def neighbor_array(self, v: int) -> np.ndarray:
        """Outgoing edges of ``v`` as an (n, 2) read-only array of (relation, object)"""
        v = self._check_entity(v)
        return self.triples[self._offsets[v]:self._offsets[v + 1], 1:]

    def degree(self, v: int) -> int:
        """Occurrences of ``v`` as subject plus occurrences as object (self-loops count twice)"""
        return int(self._degree[self._check_entity(v)])

    def degree_by_relation(self, v: int, r: int) -> int:
        v, r = self._check_entity(v), self._check_relation(r)
        key = v * self.num_relations + r
        idx = int(np.searchsorted(self._relation_degree_keys, key))
        if idx < len(self._relation_degree_keys) and self._relation_degree_keys[idx] == key:
            return int(self._relation_degree_counts[idx])
        return 0

    @property
    def degrees(self) -> np.ndarray:
        """Degree of every entity, indexed by id"""
        return self._degree

    def relation_degree_table(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Nonzero (entity, relation, degree) entries as three parallel arrays"""
        keys = self._relation_degree_keys
        return keys // self.num_relations, keys % self.num_relations, self._relation_degree_counts

    def relation_size(self, r: int) -> int:
        """Number of triples carrying relation ``r``"""
        return int(self._relation_sizes[self._check_relation(r)])

    def contains(self, s: int, r: int, o: int) -> bool:
        if not (0 <= s < self.num_entities and 0 <= o < self.num_entities
                and 0 <= r < self.num_relations):
            return False
        block = self.triples[self._offsets[s]:self._offsets[s + 1]]
        keys = block[:, 1] * self.num_entities + block[:, 2]
        key = r * self.num_entities + o
        idx = int(np.searchsorted(keys, key))
        return idx < len(keys) and int(keys[idx]) == key

    def iter_triples(self) -> Iterator[Triple]:
        for s, r, o in self.triples:
            yield Triple(int(s), int(r), int(o))

    def triple_set(self) -> Set[Triple]:
        return set(self.iter_triples())

    def triple_labels(self, t: Triple) -> Tuple[str, str, str]:
        return (self.entity_labels[t.subject], self.relation_labels[t.relation],
                self.entity_labels[t.object])
