"""Environment states, actions, trajectories and paths of the path-finding agent"""
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from rex.core import Triple
from rex.errors import ContractViolation

# Sentinel relation/entity ids used in candidate arrays and LSTM inputs
STOP = -1
START = -2


class Action(NamedTuple):
    """Either STOP or the edge (source, relation, destination)"""
    relation: int
    destination: int
    source: int = -1

    @property
    def is_stop(self) -> bool:
        return self.relation == STOP

    @classmethod
    def stop(cls) -> "Action":
        return cls(STOP, STOP)

    def as_triple(self) -> Triple:
        if self.is_stop:
            raise ContractViolation("STOP is not an edge")
        return Triple(self.source, self.relation, self.destination)


@dataclass(frozen=True)
class EnvState:
    """S = (e, s_h, o_h) plus the step counter and the trajectory so far"""
    current: int
    hyp_subject: int
    hyp_object: Optional[int]
    hyp_relation: int
    step: int = 0
    visited: Tuple[int, ...] = ()
    terminal: bool = False
    stopped: bool = False

    def observe(self) -> "Observation":
        return Observation(current=self.current, hyp_subject=self.hyp_subject,
                           hyp_relation=self.hyp_relation)


class Observation(NamedTuple):
    """What the agent sees: O = (e, s_h) plus the query relation; never o_h"""
    current: int
    hyp_subject: int
    hyp_relation: int


@dataclass
class StepRecord:
    """One decision: the LSTM input, the candidates offered and the choice made"""
    prev_relation: int
    current: int
    candidates: np.ndarray  # (m, 2) rows of (relation, destination); STOP row = (-1, -1)
    chosen: int

    @property
    def action(self) -> Action:
        r, d = self.candidates[self.chosen]
        if r == STOP:
            return Action.stop()
        return Action(int(r), int(d), self.current)


@dataclass
class Trajectory:
    """A rollout of the agent from the hypothesis subject"""
    hyp_subject: int
    hyp_relation: int
    hyp_object: Optional[int]
    steps: List[StepRecord] = field(default_factory=list)
    visited: List[int] = field(default_factory=list)
    terminal: bool = False
    success: bool = False
    fidelity: float = 0.0
    relevance: float = 0.0
    reward: float = 0.0

    @property
    def final_entity(self) -> int:
        return self.visited[-1]

    def edges(self) -> List[Triple]:
        return [s.action.as_triple() for s in self.steps if not s.action.is_stop]

    def to_path(self) -> "GraphPath":
        return GraphPath.from_triples(self.edges(), source=self.hyp_subject)


@dataclass(frozen=True)
class GraphPath:
    """A simple chain of triples (e_0, r_1, e_1), (e_1, r_2, e_2), ..."""
    triples: Tuple[Triple, ...]
    source: int
    target: int

    def __post_init__(self) -> None:
        entities = [self.source]
        for t in self.triples:
            if t.subject != entities[-1]:
                raise ContractViolation("Consecutive path triples must chain")
            entities.append(t.object)
        if len(set(entities)) != len(entities):
            raise ContractViolation("Path entities must be distinct")
        if entities[-1] != self.target:
            raise ContractViolation("Path target does not match its last entity")

    @classmethod
    def from_triples(cls, triples, source: int) -> "GraphPath":
        triples = tuple(Triple(*map(int, t)) for t in triples)
        target = triples[-1].object if triples else source
        return cls(triples=triples, source=source, target=target)

    @property
    def entities(self) -> Tuple[int, ...]:
        return (self.source,) + tuple(t.object for t in self.triples)

    def __len__(self) -> int:
        return len(self.triples)
