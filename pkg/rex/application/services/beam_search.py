"""Beam decoding of the trained policy for ranking answers and collecting paths"""
import logging
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Tuple

import numpy as np

from rex.application.services.environment import candidate_array
from rex.application.services.policy import PolicyParameters, PolicyState, policy_step
from rex.core import Triple
from rex.domain.models.graph import KnowledgeGraph
from rex.domain.models.trajectory import START, STOP, EnvState, GraphPath
from rex.errors import ContractViolation, UnknownEntityError

logger = logging.getLogger(__name__)


class BeamEntry(NamedTuple):
    """A decoded path and the sum of its step log-probabilities"""
    path: GraphPath
    log_prob: float
    stopped: bool


class RankedAnswer(NamedTuple):
    entity: int
    path: GraphPath
    log_prob: float


@dataclass
class _Beam:
    log_prob: float
    entities: Tuple[int, ...]
    triples: Tuple[Triple, ...]
    recurrent: PolicyState
    prev_relation: int

    @property
    def current(self) -> int:
        return self.entities[-1]

    def path(self) -> GraphPath:
        return GraphPath(self.triples, self.entities[0], self.current)


def beam_search_paths(kg: KnowledgeGraph, params: PolicyParameters, subject: int, relation: int,
                      beam_width: int, max_len: int, include_arrivals: bool = False) -> List[BeamEntry]:
    """
    Every path the beam keeps, in the order it was kept

    By default only beams that take STOP or exhaust ``max_len`` are reported.
    With ``include_arrivals`` every kept edge expansion is reported as well,
    which is how explanatory paths of an agent trained to halt on arrival
    are collected. Immediate STOP at the subject is never reported.
    """
    if beam_width < 1:
        raise ContractViolation("beam_width must be at least 1")
    if max_len < 1:
        raise ContractViolation("max_len must be at least 1")
    if not 0 <= subject < kg.num_entities:
        raise UnknownEntityError(f"Unknown subject {subject}")
    beams = [_Beam(0.0, (subject,), (), PolicyState.initial(params), START)]
    entries: List[BeamEntry] = []
    for depth in range(max_len):
        expansions = []
        for beam in beams:
            state = EnvState(current=beam.current, hyp_subject=subject, hyp_object=None,
                             hyp_relation=relation, step=depth, visited=beam.entities)
            candidates = candidate_array(kg, state)
            logp, recurrent = policy_step(params, beam.recurrent, beam.prev_relation, beam.current,
                                          subject, relation, candidates)
            totals = beam.log_prob + logp
            top = np.argsort(-totals, kind="stable")[:beam_width]
            for j in top:
                expansions.append((float(totals[j]), beam, int(candidates[j, 0]), int(candidates[j, 1]), recurrent))
        expansions.sort(key=lambda e: -e[0])
        beams = []
        for total, beam, r, d, recurrent in expansions[:beam_width]:
            if r == STOP:
                if beam.triples and not include_arrivals:
                    entries.append(BeamEntry(beam.path(), total, True))
                continue
            moved = _Beam(total, beam.entities + (d,), beam.triples + (Triple(beam.current, r, d),), recurrent, r)
            if include_arrivals or depth == max_len - 1:
                entries.append(BeamEntry(moved.path(), total, False))
            beams.append(moved)
        if not beams:
            break
    return entries


def beam_search_infer(kg: KnowledgeGraph, params: PolicyParameters, subject: int, relation: int,
                      beam_width: int, max_len: int) -> List[RankedAnswer]:
    """
    Ranked answers for the query (subject, relation, ?)

    Only terminal entities count: where a beam takes STOP or reaches
    ``max_len``.

    Args:
        kg: Graph to decode on
        params: Trained policy
        subject: Query subject
        relation: Query relation
        beam_width: Beams kept per depth
        max_len: Maximum path length

    Returns:
        One entry per target entity, with its most probable path, sorted by
        log-probability descending (ties broken by entity id)
    """
    best: Dict[int, RankedAnswer] = {}
    for entry in beam_search_paths(kg, params, subject, relation, beam_width, max_len):
        target = entry.path.target
        if target not in best or entry.log_prob > best[target].log_prob:
            best[target] = RankedAnswer(target, entry.path, entry.log_prob)
    return sorted(best.values(), key=lambda a: (-a.log_prob, a.entity))
