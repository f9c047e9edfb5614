"""
REINFORCE training of the path-finding policy
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel
from tqdm import tqdm

from rex.application.schemas.config_schemas import RewardConfig
from rex.application.services.environment import candidate_array, env_reset, env_step, score_trajectory
from rex.application.services.policy import (
    PolicyParameters,
    PolicyState,
    batch_loss,
    batch_loss_and_gradients,
    policy_step,
)
from rex.core import Hypothesis
from rex.domain.models.graph import KnowledgeGraph
from rex.domain.models.info_content import ICTable
from rex.domain.models.trajectory import START, StepRecord, Trajectory
from rex.errors import ContractViolation, TrainingError

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8

TRAINING_LOG_COLUMNS = ["epoch", "batch", "mean_reward", "mean_fidelity", "mean_relevance", "loss"]


@dataclass
class TrainerState:
    """Everything besides the weights needed to resume training"""
    baseline: float = 0.0
    step: int = 0
    epoch: int = 0
    adam_t: int = 0
    adam_m: Optional[PolicyParameters] = None
    adam_v: Optional[PolicyParameters] = None

    def meta(self) -> Dict[str, float]:
        return {"baseline": self.baseline, "step": self.step, "epoch": self.epoch, "adam_t": self.adam_t}


class BatchRecord(BaseModel):
    """One row of the training log"""
    epoch: int
    batch: int
    mean_reward: float
    mean_fidelity: float
    mean_relevance: float
    loss: float


@dataclass
class TrainingLog:
    records: List[BatchRecord] = field(default_factory=list)

    def append(self, record: BatchRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.model_dump() for r in self.records], columns=TRAINING_LOG_COLUMNS)

    @property
    def mean_rewards(self) -> List[float]:
        return [r.mean_reward for r in self.records]


# Rollouts

def rollout(kg: KnowledgeGraph, params: PolicyParameters, h: Hypothesis, cfg: RewardConfig,
            rng: np.random.Generator, ic_table: Optional[ICTable] = None,
            mask_hypothesis_edge: Optional[bool] = None) -> Trajectory:
    """Sample a single terminal trajectory and score it"""
    mask = cfg.mask_hypothesis_edge if mask_hypothesis_edge is None else mask_hypothesis_edge
    state = env_reset(kg, h)
    traj = Trajectory(h.subject, h.relation, h.object, visited=[h.subject])
    recurrent = PolicyState.initial(params)
    prev_relation = START
    while not state.terminal:
        candidates = candidate_array(kg, state, mask)
        logp, recurrent = policy_step(params, recurrent, prev_relation, state.current,
                                      h.subject, h.relation, candidates)
        probs = np.exp(logp)
        chosen = int(rng.choice(len(candidates), p=probs / probs.sum()))
        record = StepRecord(prev_relation, state.current, candidates, chosen)
        traj.steps.append(record)
        action = record.action
        state = env_step(kg, state, action, cfg.max_len, cfg.use_early_stop, mask)
        if not action.is_stop:
            traj.visited.append(action.destination)
            prev_relation = action.relation
    traj.terminal = True
    return score_trajectory(traj, cfg, ic_table)


def sample_rollouts(kg: KnowledgeGraph, params: PolicyParameters, h: Hypothesis, cfg: RewardConfig,
                    seed: Optional[int] = None, rng: Optional[np.random.Generator] = None,
                    ic_table: Optional[ICTable] = None,
                    mask_hypothesis_edge: Optional[bool] = None) -> List[Trajectory]:
    """
    Sample ``cfg.rollouts`` trajectories for one hypothesis

    Args:
        kg: Graph the agent walks on
        params: Read-only parameter snapshot
        h: Hypothesis (s_h, r_h, o_h)
        cfg: Reward and rollout settings
        seed: Seed for a fresh generator when ``rng`` is not given
        rng: Generator to draw actions from
        ic_table: Overrides ``cfg.ic_table`` for the relevance reward

    Returns:
        Scored terminal trajectories
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
    return [rollout(kg, params, h, cfg, rng, ic_table, mask_hypothesis_edge) for _ in range(cfg.rollouts)]


# Update step

def _clip(grads: PolicyParameters, max_norm: Optional[float]) -> float:
    norm = grads.global_norm()
    if max_norm is not None and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for _, array in grads.items():
            array *= scale
    return norm


def _check_finite(grads: PolicyParameters, loss: float, state: TrainerState) -> None:
    bad = [name for name, array in grads.items() if not np.all(np.isfinite(array))]
    if bad or not np.isfinite(loss):
        diagnostics = {
            "step": state.step,
            "epoch": state.epoch,
            "loss": float(loss),
            "non_finite": bad,
            "norms": {name: float(np.linalg.norm(array)) for name, array in grads.items()},
        }
        raise TrainingError(f"Non-finite gradient at step {state.step}: {', '.join(bad) or 'loss'}", diagnostics)


def _apply_sgd(params: PolicyParameters, grads: PolicyParameters, lr: float) -> PolicyParameters:
    updated = params.copy()
    for name, array in updated.items():
        array -= lr * getattr(grads, name)
    return updated


def _apply_adam(params: PolicyParameters, grads: PolicyParameters, lr: float,
                state: TrainerState) -> PolicyParameters:
    if state.adam_m is None or state.adam_v is None:
        state.adam_m, state.adam_v = params.zeros_like(), params.zeros_like()
    state.adam_t += 1
    correction1 = 1.0 - ADAM_BETA1 ** state.adam_t
    correction2 = 1.0 - ADAM_BETA2 ** state.adam_t
    updated = params.copy()
    for name, array in updated.items():
        g = getattr(grads, name)
        m = getattr(state.adam_m, name)
        v = getattr(state.adam_v, name)
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        array -= lr * (m / correction1) / (np.sqrt(v / correction2) + ADAM_EPSILON)
    return updated


def reinforce_update(params: PolicyParameters, trajectories: Sequence[Trajectory], cfg: RewardConfig,
                     state: Optional[TrainerState] = None) -> Tuple[PolicyParameters, float]:
    """
    One REINFORCE step with a moving-average baseline and entropy bonus

    The advantage uses the baseline from before this batch; the baseline is
    then moved towards the batch mean reward. ``state`` is updated in place.

    Returns:
        (updated parameters, surrogate loss)
    """
    if state is None:
        state = TrainerState()
    if not trajectories:
        raise ContractViolation("reinforce_update needs at least one trajectory")
    rewards = np.array([t.reward for t in trajectories], dtype=np.float64)
    batch = [(traj, float(r - state.baseline)) for traj, r in zip(trajectories, rewards)]
    loss, grads = batch_loss_and_gradients(params, batch, cfg.entropy_weight)
    _check_finite(grads, loss, state)
    norm = _clip(grads, cfg.grad_clip)
    if cfg.optimizer == "sgd":
        updated = _apply_sgd(params, grads, cfg.lr)
    else:
        updated = _apply_adam(params, grads, cfg.lr, state)
    state.baseline = cfg.baseline_decay * state.baseline + (1.0 - cfg.baseline_decay) * float(rewards.mean())
    state.step += 1
    logger.debug(f"step {state.step}: loss {loss:.6g}, grad norm {norm:.4g}, baseline {state.baseline:.4g}")
    return updated, float(loss)


# Training loop

def _batch_seeds(seed: int, epoch: int, batch: int, n: int) -> List[np.random.SeedSequence]:
    return np.random.SeedSequence([seed, epoch, batch]).spawn(n)


def train(kg: KnowledgeGraph, train_hypotheses: Sequence[Hypothesis], cfg: RewardConfig,
          ic_table: Optional[ICTable] = None, params: Optional[PolicyParameters] = None,
          state: Optional[TrainerState] = None, threads: int = 1, init_seed: Optional[int] = None,
          progress: bool = False) -> Tuple[PolicyParameters, TrainingLog]:
    """
    Train the policy over epochs x batches of hypotheses

    Rollouts for the hypotheses of a batch may run on ``threads`` workers;
    each hypothesis draws from its own generator spawned from
    (seed, epoch, batch), and results are reduced in batch order, so the
    outcome does not depend on the worker count.

    Args:
        kg: Training graph (test edges removed)
        train_hypotheses: Hypotheses with known objects
        cfg: Agent settings
        ic_table: Overrides ``cfg.ic_table``
        params: Resume from these weights
        state: Resume from this optimizer/baseline state (updated in place)
        threads: Rollout workers
        init_seed: Seed for fresh weights; defaults to ``cfg.seed``
        progress: Show a tqdm bar over batches

    Returns:
        (trained parameters, per-batch log)
    """
    hypotheses = list(train_hypotheses)
    if not hypotheses:
        raise ContractViolation("Training needs at least one hypothesis")
    if any(h.object is None for h in hypotheses):
        raise ContractViolation("Training hypotheses need a known object")
    table = ic_table if ic_table is not None else cfg.ic_table
    if params is None:
        params = PolicyParameters.initialize(
            kg.num_entities, kg.num_relations, cfg.entity_dim, cfg.relation_dim, cfg.hidden_dim,
            seed=cfg.seed if init_seed is None else init_seed, scale=cfg.init_scale,
        )
    params.validate()
    if params.entity_emb.shape[0] != kg.num_entities or params.relation_emb.shape[0] != kg.num_relations:
        raise ContractViolation("Policy vocabulary sizes do not match the graph")
    state = state if state is not None else TrainerState()
    log = TrainingLog()
    n_batches = (len(hypotheses) + cfg.batch_size - 1) // cfg.batch_size
    executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for epoch in range(state.epoch, cfg.epochs):
            order = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch])).permutation(len(hypotheses))
            batches = tqdm(range(n_batches), desc=f"epoch {epoch + 1}/{cfg.epochs}", disable=not progress)
            for b in batches:
                if cfg.max_steps is not None and state.step >= cfg.max_steps:
                    break
                batch = [hypotheses[i] for i in order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
                seeds = _batch_seeds(cfg.seed, epoch, b, len(batch))

                def run(job):
                    h, seq = job
                    return sample_rollouts(kg, params, h, cfg, rng=np.random.default_rng(seq), ic_table=table)

                jobs = list(zip(batch, seeds))
                groups = list(executor.map(run, jobs)) if executor else [run(job) for job in jobs]
                trajectories = [t for group in groups for t in group]
                params, loss = reinforce_update(params, trajectories, cfg, state)
                record = BatchRecord(
                    epoch=epoch, batch=b,
                    mean_reward=float(np.mean([t.reward for t in trajectories])),
                    mean_fidelity=float(np.mean([t.fidelity for t in trajectories])),
                    mean_relevance=float(np.mean([t.relevance for t in trajectories])),
                    loss=loss,
                )
                log.append(record)
                batches.set_postfix(reward=f"{record.mean_reward:.3f}")
            state.epoch = epoch + 1
            epoch_rewards = [r.mean_reward for r in log.records if r.epoch == epoch]
            if epoch_rewards:
                logger.info(f"epoch {epoch + 1}: mean reward {np.mean(epoch_rewards):.4f} over {len(epoch_rewards)} batches")
            if cfg.max_steps is not None and state.step >= cfg.max_steps:
                break
    finally:
        if executor:
            executor.shutdown()
    return params, log


# Verification

def gradient_check(params: PolicyParameters, batch: Sequence[Tuple[Trajectory, float]], epsilon: float = 1e-5,
                   entropy_weight: float = 0.0, max_coordinates: int = 200, seed: int = 0) -> float:
    """
    Largest relative error between analytic and central-difference gradients

    Args:
        params: Point to check at
        batch: (trajectory, advantage) pairs defining the surrogate loss
        epsilon: Finite-difference step
        entropy_weight: Entropy bonus weight in the loss
        max_coordinates: Sample at most this many coordinates
        seed: Seed for the coordinate sample

    Returns:
        max |analytic - numeric| / max(|analytic| + |numeric|, 1e-7)
    """
    if epsilon <= 0:
        raise ContractViolation("epsilon must be positive")
    _, grads = batch_loss_and_gradients(params, batch, entropy_weight)
    analytic = grads.flatten()
    theta = params.flatten()
    if theta.size <= max_coordinates:
        coords = np.arange(theta.size)
    else:
        coords = np.sort(np.random.default_rng(seed).choice(theta.size, size=max_coordinates, replace=False))
    worst = 0.0
    for i in coords:
        shifted = theta.copy()
        shifted[i] = theta[i] + epsilon
        plus = batch_loss(params.unflatten(shifted), batch, entropy_weight)
        shifted[i] = theta[i] - epsilon
        minus = batch_loss(params.unflatten(shifted), batch, entropy_weight)
        numeric = (plus - minus) / (2.0 * epsilon)
        error = abs(analytic[i] - numeric) / max(abs(analytic[i]) + abs(numeric), 1e-7)
        worst = max(worst, float(error))
    return worst
