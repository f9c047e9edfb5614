"""
History-dependent policy: an LSTM over (previous relation, current entity)
inputs and a two-layer scorer that rates each candidate action by a dot
product with its [relation; destination] embedding. Forward and backward
passes are written out by hand in numpy.
"""
from dataclasses import dataclass, fields
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from rex.domain.models.trajectory import START, STOP, Action, Trajectory
from rex.errors import ContractViolation


@dataclass
class PolicyParameters:
    """All learnable weights; gate rows of ``lstm_w`` are ordered input, forget, output, candidate"""
    entity_emb: np.ndarray       # (|E|, de)
    relation_emb: np.ndarray     # (|R|, dr)
    stop_entity: np.ndarray      # (de,)
    stop_relation: np.ndarray    # (dr,)
    start_relation: np.ndarray   # (dr,)
    lstm_w: np.ndarray           # (4H, dr + de + H)
    lstm_b: np.ndarray           # (4H,)
    mlp_w1: np.ndarray           # (M, H + 2 de + dr)
    mlp_b1: np.ndarray           # (M,)
    mlp_w2: np.ndarray           # (dr + de, M)
    mlp_b2: np.ndarray           # (dr + de,)

    @classmethod
    def names(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def zeros(cls, n_entities: int, n_relations: int, entity_dim: int, relation_dim: int,
              hidden_dim: int) -> "PolicyParameters":
        de, dr, h = entity_dim, relation_dim, hidden_dim
        return cls(
            entity_emb=np.zeros((n_entities, de)),
            relation_emb=np.zeros((n_relations, dr)),
            stop_entity=np.zeros(de),
            stop_relation=np.zeros(dr),
            start_relation=np.zeros(dr),
            lstm_w=np.zeros((4 * h, dr + de + h)),
            lstm_b=np.zeros(4 * h),
            mlp_w1=np.zeros((h, h + 2 * de + dr)),
            mlp_b1=np.zeros(h),
            mlp_w2=np.zeros((dr + de, h)),
            mlp_b2=np.zeros(dr + de),
        )

    @classmethod
    def initialize(cls, n_entities: int, n_relations: int, entity_dim: int, relation_dim: int,
                   hidden_dim: int, seed: int, scale: float = 0.1) -> "PolicyParameters":
        """Gaussian weights with std ``scale``; forget-gate bias starts at 1"""
        params = cls.zeros(n_entities, n_relations, entity_dim, relation_dim, hidden_dim)
        rng = np.random.default_rng(seed)
        for name in cls.names():
            array = getattr(params, name)
            array[...] = rng.normal(0.0, scale, size=array.shape)
        params.lstm_b[...] = 0.0
        params.lstm_b[hidden_dim:2 * hidden_dim] = 1.0
        params.mlp_b1[...] = 0.0
        params.mlp_b2[...] = 0.0
        return params

    # Shapes

    @property
    def entity_dim(self) -> int:
        return int(self.entity_emb.shape[1])

    @property
    def relation_dim(self) -> int:
        return int(self.relation_emb.shape[1])

    @property
    def hidden_dim(self) -> int:
        return int(self.lstm_b.shape[0] // 4)

    def validate(self) -> None:
        de, dr, h = self.entity_dim, self.relation_dim, self.hidden_dim
        m = self.mlp_b1.shape[0]
        expected = {
            "stop_entity": (de,), "stop_relation": (dr,), "start_relation": (dr,),
            "lstm_w": (4 * h, dr + de + h), "lstm_b": (4 * h,),
            "mlp_w1": (m, h + 2 * de + dr), "mlp_b1": (m,),
            "mlp_w2": (dr + de, m), "mlp_b2": (dr + de,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ContractViolation(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if not self.all_finite():
            raise ContractViolation("Policy parameters contain non-finite values")

    # Vector-space helpers

    def items(self) -> Iterator[Tuple[str, np.ndarray]]:
        for name in self.names():
            yield name, getattr(self, name)

    def copy(self) -> "PolicyParameters":
        return PolicyParameters(**{name: array.copy() for name, array in self.items()})

    def zeros_like(self) -> "PolicyParameters":
        return PolicyParameters(**{name: np.zeros_like(array) for name, array in self.items()})

    def num_parameters(self) -> int:
        return int(sum(array.size for _, array in self.items()))

    def flatten(self) -> np.ndarray:
        return np.concatenate([array.ravel() for _, array in self.items()])

    def unflatten(self, vector: np.ndarray) -> "PolicyParameters":
        arrays, offset = {}, 0
        for name, array in self.items():
            arrays[name] = np.asarray(vector[offset:offset + array.size], dtype=np.float64).reshape(array.shape).copy()
            offset += array.size
        return PolicyParameters(**arrays)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(array)) for _, array in self.items())

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(array * array)) for _, array in self.items())))


@dataclass
class History:
    """H_t: the hypothesis (s_h, query relation) and the per-step inputs (previous relation, entity)"""
    hyp_subject: int
    hyp_relation: int
    inputs: List[Tuple[int, int]]

    @classmethod
    def start(cls, hyp_subject: int, hyp_relation: int) -> "History":
        return cls(hyp_subject, hyp_relation, [(START, hyp_subject)])

    def extend(self, relation: int, entity: int) -> "History":
        return History(self.hyp_subject, self.hyp_relation, self.inputs + [(relation, entity)])

    @property
    def current(self) -> int:
        return self.inputs[-1][1]


# Embedding lookups with sentinels

def relation_vector(p: PolicyParameters, r: int) -> np.ndarray:
    if r == STOP:
        return p.stop_relation
    if r == START:
        return p.start_relation
    return p.relation_emb[r]


def entity_vector(p: PolicyParameters, e: int) -> np.ndarray:
    if e == STOP:
        return p.stop_entity
    return p.entity_emb[e]


def _add_relation_grad(g: PolicyParameters, r: int, d: np.ndarray) -> None:
    if r == STOP:
        g.stop_relation += d
    elif r == START:
        g.start_relation += d
    else:
        g.relation_emb[r] += d


def _add_entity_grad(g: PolicyParameters, e: int, d: np.ndarray) -> None:
    if e == STOP:
        g.stop_entity += d
    else:
        g.entity_emb[e] += d


def action_matrix(p: PolicyParameters, candidates: np.ndarray) -> np.ndarray:
    """Rows [relation embedding; destination embedding]; STOP uses its dedicated vectors"""
    rel, dest = candidates[:, 0], candidates[:, 1]
    rel_part = p.relation_emb[np.where(rel >= 0, rel, 0)]
    ent_part = p.entity_emb[np.where(dest >= 0, dest, 0)]
    stop = rel == STOP
    if np.any(stop):
        rel_part = rel_part.copy()
        ent_part = ent_part.copy()
        rel_part[stop] = p.stop_relation
        ent_part[stop] = p.stop_entity
    return np.concatenate([rel_part, ent_part], axis=1)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _log_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - np.max(scores)
    return shifted - np.log(np.sum(np.exp(shifted)))


# LSTM cell

def lstm_forward(p: PolicyParameters, x: np.ndarray, h: np.ndarray, c: np.ndarray):
    hidden = h.shape[0]
    xh = np.concatenate([x, h])
    a = p.lstm_w @ xh + p.lstm_b
    i = _sigmoid(a[:hidden])
    f = _sigmoid(a[hidden:2 * hidden])
    o = _sigmoid(a[2 * hidden:3 * hidden])
    g = np.tanh(a[3 * hidden:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (xh, i, f, o, g, c, tc)


def lstm_backward(p: PolicyParameters, dh: np.ndarray, dc: np.ndarray, cache, grads: PolicyParameters):
    xh, i, f, o, g, c_prev, tc = cache
    hidden = dh.shape[0]
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    di, dg, df = dc * g, dc * i, dc * c_prev
    da = np.concatenate([di * i * (1.0 - i), df * f * (1.0 - f), do * o * (1.0 - o), dg * (1.0 - g * g)])
    grads.lstm_w += np.outer(da, xh)
    grads.lstm_b += da
    dxh = p.lstm_w.T @ da
    return dxh[:-hidden], dxh[-hidden:], dc * f


def lstm_input(p: PolicyParameters, prev_relation: int, entity: int) -> np.ndarray:
    return np.concatenate([relation_vector(p, prev_relation), entity_vector(p, entity)])


# Action scorer

def score_forward(p: PolicyParameters, h: np.ndarray, current: int, subject: int, query: int,
                  candidates: np.ndarray):
    """Log-probabilities over ``candidates`` and the cache for the backward pass"""
    z = np.concatenate([h, entity_vector(p, current), entity_vector(p, subject), relation_vector(p, query)])
    a1 = np.tanh(p.mlp_w1 @ z + p.mlp_b1)
    u = p.mlp_w2 @ a1 + p.mlp_b2
    actions = action_matrix(p, candidates)
    scores = actions @ u
    return _log_softmax(scores), (z, a1, u, actions)


def score_backward(p: PolicyParameters, dscores: np.ndarray, cache, candidates: np.ndarray,
                   current: int, subject: int, query: int, grads: PolicyParameters) -> np.ndarray:
    """Accumulate scorer gradients; returns d loss / d h"""
    z, a1, u, actions = cache
    de, dr, hidden = p.entity_dim, p.relation_dim, p.hidden_dim
    du = actions.T @ dscores
    dactions = np.outer(dscores, u)
    for (r, d), row in zip(candidates.tolist(), dactions):
        _add_relation_grad(grads, r, row[:dr])
        _add_entity_grad(grads, d, row[dr:])
    grads.mlp_w2 += np.outer(du, a1)
    grads.mlp_b2 += du
    dpre = (p.mlp_w2.T @ du) * (1.0 - a1 * a1)
    grads.mlp_w1 += np.outer(dpre, z)
    grads.mlp_b1 += dpre
    dz = p.mlp_w1.T @ dpre
    _add_entity_grad(grads, current, dz[hidden:hidden + de])
    _add_entity_grad(grads, subject, dz[hidden + de:hidden + 2 * de])
    _add_relation_grad(grads, query, dz[hidden + 2 * de:])
    return dz[:hidden]


# Public forward API

@dataclass
class PolicyState:
    """Recurrent state carried between decisions of one rollout"""
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def initial(cls, p: PolicyParameters) -> "PolicyState":
        return cls(np.zeros(p.hidden_dim), np.zeros(p.hidden_dim))


def _as_candidates(actions: Union[np.ndarray, Sequence[Action]]) -> np.ndarray:
    if isinstance(actions, np.ndarray):
        return actions.reshape(-1, 2).astype(np.int64)
    return np.array([[a.relation, a.destination] for a in actions], dtype=np.int64).reshape(-1, 2)


def policy_step(p: PolicyParameters, state: PolicyState, prev_relation: int, current: int,
                subject: int, query: int, candidates: np.ndarray) -> Tuple[np.ndarray, PolicyState]:
    """Advance the history encoder by one input and return log-probabilities over candidates"""
    if len(candidates) == 0:
        raise ContractViolation("policy needs at least one candidate action")
    h, c, _ = lstm_forward(p, lstm_input(p, prev_relation, current), state.h, state.c)
    logp, _ = score_forward(p, h, current, subject, query, candidates)
    return logp, PolicyState(h, c)


def encode_history(p: PolicyParameters, history: History) -> PolicyState:
    state = PolicyState.initial(p)
    for prev_relation, entity in history.inputs:
        h, c, _ = lstm_forward(p, lstm_input(p, prev_relation, entity), state.h, state.c)
        state = PolicyState(h, c)
    return state


def policy_forward(p: PolicyParameters, history: History,
                   actions: Union[np.ndarray, Sequence[Action]]) -> np.ndarray:
    """
    Probability distribution over ``actions`` given the history

    Args:
        p: Policy parameters
        history: Hypothesis plus every (previous relation, entity) input so far
        actions: Candidate actions (Action list or (m, 2) array)

    Returns:
        Probabilities aligned with ``actions``; each entry depends only on its
        own action, so permuting the candidates permutes the output
    """
    candidates = _as_candidates(actions)
    if len(candidates) == 0:
        raise ContractViolation("policy needs at least one candidate action")
    state = encode_history(p, history)
    logp, _ = score_forward(p, state.h, history.current, history.hyp_subject, history.hyp_relation, candidates)
    return np.exp(logp)


# Surrogate loss for REINFORCE

def trajectory_loss(p: PolicyParameters, traj: Trajectory, advantage: float, entropy_weight: float,
                    grads: Optional[PolicyParameters] = None) -> Tuple[float, Dict[str, float]]:
    """
    -advantage * sum_t log pi(a_t | H_t) - entropy_weight * sum_t entropy_t for one trajectory

    When ``grads`` is given the gradient of the loss is accumulated into it.
    """
    hidden = p.hidden_dim
    h, c = np.zeros(hidden), np.zeros(hidden)
    subject, query = traj.hyp_subject, traj.hyp_relation
    loss, total_logp, total_entropy = 0.0, 0.0, 0.0
    caches = []
    for step in traj.steps:
        h, c, lstm_cache = lstm_forward(p, lstm_input(p, step.prev_relation, step.current), h, c)
        logp, score_cache = score_forward(p, h, step.current, subject, query, step.candidates)
        probs = np.exp(logp)
        entropy = float(-np.sum(probs * logp))
        total_logp += float(logp[step.chosen])
        total_entropy += entropy
        caches.append((lstm_cache, score_cache, probs, logp, entropy))
    loss = -advantage * total_logp - entropy_weight * total_entropy
    stats = {"log_prob": total_logp, "entropy": total_entropy}
    if grads is None:
        return loss, stats

    dh_next, dc_next = np.zeros(hidden), np.zeros(hidden)
    for step, (lstm_cache, score_cache, probs, logp, entropy) in zip(reversed(traj.steps), reversed(caches)):
        onehot = np.zeros_like(probs)
        onehot[step.chosen] = 1.0
        dscores = -advantage * (onehot - probs) + entropy_weight * probs * (logp + entropy)
        dh = score_backward(p, dscores, score_cache, step.candidates, step.current, subject, query, grads)
        dx, dh_next, dc_next = lstm_backward(p, dh + dh_next, dc_next, lstm_cache, grads)
        dr = p.relation_dim
        _add_relation_grad(grads, step.prev_relation, dx[:dr])
        _add_entity_grad(grads, step.current, dx[dr:])
    return loss, stats


def batch_loss_and_gradients(p: PolicyParameters, batch: Sequence[Tuple[Trajectory, float]],
                             entropy_weight: float) -> Tuple[float, PolicyParameters]:
    """Mean surrogate loss over (trajectory, advantage) pairs and its gradient"""
    grads = p.zeros_like()
    if not batch:
        return 0.0, grads
    total = 0.0
    for traj, advantage in batch:
        loss, _ = trajectory_loss(p, traj, advantage, entropy_weight, grads)
        total += loss
    scale = 1.0 / len(batch)
    for _, array in grads.items():
        array *= scale
    return total * scale, grads


def batch_loss(p: PolicyParameters, batch: Sequence[Tuple[Trajectory, float]], entropy_weight: float) -> float:
    if not batch:
        return 0.0
    return sum(trajectory_loss(p, traj, adv, entropy_weight)[0] for traj, adv in batch) / len(batch)
