"""Metapaths, ontology hierarchy and explanation subgraphs"""
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Literal, Optional, Set, Tuple, Union

import networkx as nx
from pydantic import ConfigDict, Field, field_validator

from rex.core import ConfiguredBaseModel, FrozenModel

METAPATH_SEPARATOR = "|"
NO_EXPLANATION = "no explanation found"
EXPLAINED = "explained"


class Metapath(FrozenModel):
    """type_0, r_1, type_1, ..., r_k, type_k"""
    elements: Tuple[str, ...]

    @field_validator("elements")
    @classmethod
    def validate_alternation(cls, value: Tuple[str, ...]) -> Tuple[str, ...]:
        if len(value) % 2 == 0:
            raise ValueError("A metapath alternates types and relations and has odd length")
        if any(not element or METAPATH_SEPARATOR in element for element in value):
            raise ValueError(f"Metapath elements must be non-empty and free of '{METAPATH_SEPARATOR}'")
        return value

    @property
    def types(self) -> Tuple[str, ...]:
        return self.elements[0::2]

    @property
    def relations(self) -> Tuple[str, ...]:
        return self.elements[1::2]

    def __len__(self) -> int:
        return len(self.relations)

    def to_line(self) -> str:
        return METAPATH_SEPARATOR.join(self.elements)

    @classmethod
    def from_line(cls, line: str) -> "Metapath":
        return cls(elements=tuple(part.strip() for part in line.strip().split(METAPATH_SEPARATOR)))

    def __str__(self) -> str:
        return self.to_line()


@dataclass(eq=False)
class OntologyHierarchy:
    """
    Subclass DAG (edges child -> parent) plus entity annotations

    ``annotations`` maps entity ids to the classes they are typed with.
    """
    graph: nx.DiGraph
    annotations: Dict[int, FrozenSet[str]] = field(default_factory=dict)
    class_labels: Dict[str, str] = field(default_factory=dict)
    _ancestor_cache: Dict[str, FrozenSet[str]] = field(default_factory=dict, repr=False)

    @property
    def classes(self) -> List[str]:
        return sorted(self.graph.nodes)

    def label(self, cls: str) -> str:
        return self.class_labels.get(cls, cls)

    def has_class(self, cls: str) -> bool:
        return cls in self.graph

    def ancestors(self, cls: str) -> FrozenSet[str]:
        """Reflexive-transitive superclasses of ``cls``"""
        cached = self._ancestor_cache.get(cls)
        if cached is None:
            cached = frozenset(nx.descendants(self.graph, cls) | {cls})
            self._ancestor_cache[cls] = cached
        return cached

    def entity_classes(self, entity: int) -> FrozenSet[str]:
        return self.annotations.get(entity, frozenset())

    def entity_ancestors(self, entity: int) -> Set[str]:
        result: Set[str] = set()
        for cls in self.entity_classes(entity):
            result |= self.ancestors(cls)
        return result

    def is_direct_subclass(self, child: str, parent: str) -> bool:
        return self.graph.has_edge(child, parent)


# Exported explanation document

class ClassNode(FrozenModel):
    id: str
    label: str


class TypeAxiom(FrozenModel):
    """entity -type-> class"""
    model_config = ConfigDict(frozen=True, populate_by_name=True, extra="forbid")

    entity: str
    class_: str = Field(alias="class")


class SubclassAxiom(FrozenModel):
    """class -subclass-> class"""
    model_config = ConfigDict(frozen=True, populate_by_name=True, extra="forbid")

    child: str
    parent: str


Axiom = Union[TypeAxiom, SubclassAxiom]


class PathRecord(FrozenModel):
    """One selected path with the metapath it represents"""
    metapath: str
    triples: Tuple[Tuple[str, str, str], ...]
    relevance: float


class ExplanationSubgraph(ConfiguredBaseModel):
    """
    Selected paths merged into one graph and enriched with ontology classes

    Everything is stored by label so the JSON document is self-contained.
    """
    hypothesis: Optional[Tuple[str, str, str]] = None
    status: Literal["explained", "no explanation found"] = NO_EXPLANATION
    paths: List[PathRecord] = Field(default_factory=list)
    classes: List[ClassNode] = Field(default_factory=list)
    axioms: List[Axiom] = Field(default_factory=list)

    @property
    def is_empty(self) -> bool:
        return not self.paths

    @property
    def triples(self) -> List[Tuple[str, str, str]]:
        """Union of the path triples, sorted"""
        return sorted({t for p in self.paths for t in p.triples})

    @property
    def entities(self) -> List[str]:
        return sorted({e for s, _, o in self.triples for e in (s, o)})

    def provenance(self) -> Dict[Tuple[str, str, str], str]:
        """Triple -> metapath of the first selected path containing it"""
        origin: Dict[Tuple[str, str, str], str] = {}
        for p in self.paths:
            for t in p.triples:
                origin.setdefault(t, p.metapath)
        return origin

    def type_axioms(self) -> List[TypeAxiom]:
        return [a for a in self.axioms if isinstance(a, TypeAxiom)]

    def subclass_axioms(self) -> List[SubclassAxiom]:
        return [a for a in self.axioms if isinstance(a, SubclassAxiom)]


class ExplanationStats(ConfiguredBaseModel):
    """Batch summary of explanation assembly"""
    hypotheses: int = 0
    explained: int = 0
    mean_paths_per_hypothesis: float = 0.0
    metapath_counts: Dict[str, int] = Field(default_factory=dict)
