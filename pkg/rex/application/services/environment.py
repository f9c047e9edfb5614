"""
Deterministic, partially observed MDP over the knowledge graph, plus rewards
"""
from dataclasses import replace
from typing import List, Optional

import numpy as np

from rex.application.schemas.config_schemas import RewardConfig
from rex.application.services.info_content_service import path_relevance
from rex.core import Hypothesis
from rex.domain.models.graph import KnowledgeGraph
from rex.domain.models.info_content import ICTable
from rex.domain.models.trajectory import STOP, Action, EnvState, Trajectory
from rex.errors import ContractViolation, UnknownEntityError

STOP_ROW = np.array([[STOP, STOP]], dtype=np.int64)


def env_reset(kg: KnowledgeGraph, h: Hypothesis) -> EnvState:
    """Place the agent on the hypothesis subject"""
    if not 0 <= h.subject < kg.num_entities:
        raise UnknownEntityError(f"Unknown hypothesis subject {h.subject}")
    return EnvState(current=h.subject, hyp_subject=h.subject, hyp_object=h.object,
                    hyp_relation=h.relation, step=0, visited=(h.subject,))


def candidate_array(kg: KnowledgeGraph, state: EnvState, mask_hypothesis_edge: bool = False) -> np.ndarray:
    """
    Available actions as an (m, 2) array of (relation, destination)

    Edges leading back to a visited entity are removed; the final row is
    always STOP. With ``mask_hypothesis_edge`` the hypothesis edge and its
    inverse are hidden as well.
    """
    if state.terminal:
        return STOP_ROW.copy()
    edges = kg.neighbor_array(state.current)
    if len(edges):
        keep = ~np.isin(edges[:, 1], np.fromiter(state.visited, dtype=np.int64))
        if mask_hypothesis_edge and state.hyp_object is not None:
            if state.current == state.hyp_subject:
                keep &= ~((edges[:, 0] == state.hyp_relation) & (edges[:, 1] == state.hyp_object))
            if state.current == state.hyp_object:
                inverse = int(kg.relation_inverse[state.hyp_relation])
                keep &= ~((edges[:, 0] == inverse) & (edges[:, 1] == state.hyp_subject))
        edges = edges[keep]
    return np.concatenate([edges, STOP_ROW]) if len(edges) else STOP_ROW.copy()


def available_actions(kg: KnowledgeGraph, state: EnvState, mask_hypothesis_edge: bool = False) -> List[Action]:
    """A_S: outgoing edges to unvisited entities plus STOP, in (relation, entity) order"""
    return [Action.stop() if r == STOP else Action(int(r), int(d), state.current)
            for r, d in candidate_array(kg, state, mask_hypothesis_edge)]


def env_step(kg: KnowledgeGraph, state: EnvState, action: Action, max_len: int = 3,
             use_early_stop: bool = True, mask_hypothesis_edge: bool = False) -> EnvState:
    """
    Apply an action

    Args:
        kg: Graph the agent walks on
        state: Current, non-terminal state
        action: One of ``available_actions(kg, state)``
        max_len: Horizon in edges
        use_early_stop: End the episode on arriving at o_h

    Returns:
        The successor state
    """
    if state.terminal:
        raise ContractViolation("Cannot act in a terminal state")
    if action.is_stop:
        return replace(state, terminal=True, stopped=True)
    candidates = candidate_array(kg, state, mask_hypothesis_edge)
    legal = np.any((candidates[:, 0] == action.relation) & (candidates[:, 1] == action.destination))
    if not legal or (action.source not in (-1, state.current)):
        raise ContractViolation(f"Illegal action {tuple(action)} from entity {state.current}")
    step = state.step + 1
    arrived = state.hyp_object is not None and action.destination == state.hyp_object
    terminal = (use_early_stop and arrived) or step >= max_len
    return replace(state, current=action.destination, step=step,
                   visited=state.visited + (action.destination,), terminal=terminal)


# Rewards

def reward_fidelity(traj: Trajectory) -> float:
    """1 when the terminal entity is the hypothesis object, else 0"""
    if not traj.terminal:
        raise ContractViolation("Fidelity is defined on terminal trajectories only")
    return 1.0 if traj.hyp_object is not None and traj.final_entity == traj.hyp_object else 0.0


def reward_relevance(ic_table: ICTable, traj: Trajectory) -> float:
    """Mean edge IC of the trajectory's path; 0 for an immediate STOP"""
    if not traj.terminal:
        raise ContractViolation("Relevance is defined on terminal trajectories only")
    edges = traj.edges()
    if not edges:
        return 0.0
    return path_relevance(ic_table, edges)


def reward_final(traj: Trajectory, cfg: RewardConfig, ic_table: Optional[ICTable] = None) -> float:
    """Fidelity x relevance; relevance is replaced by 1 when ``use_relevance`` is off"""
    fidelity = reward_fidelity(traj)
    if fidelity == 0.0:
        return 0.0
    if not cfg.use_relevance:
        return fidelity
    table = ic_table if ic_table is not None else cfg.ic_table
    if table is None:
        raise ContractViolation("Relevance reward requires an IC table")
    return fidelity * reward_relevance(table, traj)


def score_trajectory(traj: Trajectory, cfg: RewardConfig, ic_table: Optional[ICTable] = None) -> Trajectory:
    """Fill the reward fields of a terminal trajectory"""
    table = ic_table if ic_table is not None else cfg.ic_table
    traj.fidelity = reward_fidelity(traj)
    traj.success = traj.fidelity == 1.0
    traj.relevance = reward_relevance(table, traj) if table is not None else 0.0
    traj.reward = reward_final(traj, cfg, table)
    return traj
