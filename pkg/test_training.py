"""Test rollouts, REINFORCE updates and end-to-end learning on planted graphs"""
import numpy as np
import pytest

from conftest import graph_from_labels, hypothesis, planted_graph
from rex.application.schemas.config_schemas import RewardConfig
from rex.application.services.beam_search import beam_search_paths
from rex.application.services.evaluation_service import evaluate, mrr, rank_of_target
from rex.application.services.graph_service import add_inverse_edges
from rex.application.services.info_content_service import compute_ic_table
from rex.application.services.policy import PolicyParameters, trajectory_loss
from rex.application.services.trainer import (
    TRAINING_LOG_COLUMNS,
    TrainerState,
    reinforce_update,
    sample_rollouts,
    train,
)
from rex.core import ICMode
from rex.errors import ContractViolation, TrainingError

SMALL = dict(entity_dim=8, relation_dim=8, hidden_dim=12, init_scale=0.3)


def _params(kg, seed=0):
    return PolicyParameters.initialize(kg.num_entities, kg.num_relations, SMALL["entity_dim"],
                                       SMALL["relation_dim"], SMALL["hidden_dim"], seed=seed,
                                       scale=SMALL["init_scale"])


@pytest.fixture
def closed_kg(toy_kg):
    return add_inverse_edges(toy_kg)


def test_sample_rollouts_count_and_simplicity(closed_kg):
    """30 rollouts, each a simple path from the subject"""
    cfg = RewardConfig(use_relevance=False, rollouts=30, max_len=3, **SMALL)
    h = hypothesis(closed_kg, "drug", "treats", "disease")
    trajectories = sample_rollouts(closed_kg, _params(closed_kg), h, cfg, seed=1)
    assert len(trajectories) == 30
    for traj in trajectories:
        assert traj.terminal
        assert traj.visited[0] == h.subject
        assert len(set(traj.visited)) == len(traj.visited)
        assert len(traj.edges()) <= 3
        if len(traj.edges()):
            path = traj.to_path()
            assert path.entities == tuple(traj.visited)


def test_masked_rollouts_never_use_the_hypothesis_edge(closed_kg):
    cfg = RewardConfig(use_relevance=False, rollouts=50, max_len=2, mask_hypothesis_edge=True, **SMALL)
    h = hypothesis(closed_kg, "drug2", "treats", "disease")
    for traj in sample_rollouts(closed_kg, _params(closed_kg), h, cfg, seed=2):
        assert h.as_triple() not in traj.edges()


def test_zero_advantage_leaves_parameters_unchanged(closed_kg):
    cfg = RewardConfig(use_relevance=False, entropy_weight=0.0, optimizer="sgd", lr=0.5, **SMALL)
    params = _params(closed_kg)
    h = hypothesis(closed_kg, "drug", "treats", "disease")
    trajectories = sample_rollouts(closed_kg, params, h, cfg, seed=3)
    state = TrainerState(baseline=0.0)
    for traj in trajectories:
        traj.reward = 0.0
    updated, _ = reinforce_update(params, trajectories, cfg, state)
    assert np.array_equal(updated.flatten(), params.flatten())
    assert state.step == 1


def test_rewarded_trajectory_becomes_more_likely(closed_kg):
    cfg = RewardConfig(use_relevance=False, entropy_weight=0.0, optimizer="sgd", lr=1e-2, max_len=2, **SMALL)
    params = _params(closed_kg, seed=4)
    h = hypothesis(closed_kg, "drug", "treats", "disease")
    trajectories = sample_rollouts(closed_kg, params, h, cfg.model_copy(update={"rollouts": 200}), seed=4)
    winner = next(t for t in trajectories if t.success)
    before = trajectory_loss(params, winner, 1.0, 0.0)[1]["log_prob"]
    updated, _ = reinforce_update(params, [winner], cfg, TrainerState(baseline=0.0))
    after = trajectory_loss(updated, winner, 1.0, 0.0)[1]["log_prob"]
    assert after > before


def test_baseline_moves_towards_batch_reward(closed_kg):
    cfg = RewardConfig(use_relevance=False, baseline_decay=0.9, **SMALL)
    params = _params(closed_kg)
    h = hypothesis(closed_kg, "drug", "treats", "disease")
    trajectories = sample_rollouts(closed_kg, params, h, cfg, seed=5)
    for traj in trajectories:
        traj.reward = 1.0
    state = TrainerState(baseline=0.0)
    reinforce_update(params, trajectories, cfg, state)
    assert state.baseline == pytest.approx(0.1)
    assert state.adam_t == 1


def test_one_epoch_two_hypotheses_batch_one(closed_kg):
    """1 epoch over 2 hypotheses with batch size 1 gives 2 update steps"""
    cfg = RewardConfig(use_relevance=False, epochs=1, batch_size=1, rollouts=5, **SMALL)
    hypotheses = [hypothesis(closed_kg, "drug", "treats", "disease"),
                  hypothesis(closed_kg, "drug2", "treats", "disease")]
    state = TrainerState()
    _, log = train(closed_kg, hypotheses, cfg, state=state)
    assert len(log) == 2
    assert state.step == 2
    assert state.epoch == 1
    frame = log.to_frame()
    assert list(frame.columns) == TRAINING_LOG_COLUMNS
    assert frame["mean_reward"].between(0.0, 1.0).all()


def test_max_steps_caps_training(closed_kg):
    cfg = RewardConfig(use_relevance=False, epochs=5, batch_size=1, rollouts=3, max_steps=3, **SMALL)
    hypotheses = [hypothesis(closed_kg, "drug", "treats", "disease"),
                  hypothesis(closed_kg, "drug2", "treats", "disease")]
    _, log = train(closed_kg, hypotheses, cfg)
    assert len(log) == 3


def test_resume_continues_epoch_count(closed_kg):
    cfg = RewardConfig(use_relevance=False, epochs=1, batch_size=1, rollouts=3, **SMALL)
    hypotheses = [hypothesis(closed_kg, "drug", "treats", "disease")]
    state = TrainerState()
    params, _ = train(closed_kg, hypotheses, cfg, state=state)
    params, log = train(closed_kg, hypotheses, cfg.model_copy(update={"epochs": 3}), params=params, state=state)
    assert state.epoch == 3
    assert [r.epoch for r in log.records] == [1, 2]


def test_training_rejects_bad_inputs(closed_kg):
    cfg = RewardConfig(use_relevance=False, **SMALL)
    with pytest.raises(ContractViolation):
        train(closed_kg, [], cfg)
    with pytest.raises(ContractViolation):
        train(closed_kg, [hypothesis(closed_kg, "drug", "treats", None)], cfg)


def test_training_is_deterministic(closed_kg):
    cfg = RewardConfig(use_relevance=False, epochs=2, batch_size=1, rollouts=5, **SMALL)
    hypotheses = [hypothesis(closed_kg, "drug", "treats", "disease"),
                  hypothesis(closed_kg, "drug2", "treats", "disease")]
    first, log1 = train(closed_kg, hypotheses, cfg)
    second, log2 = train(closed_kg, hypotheses, cfg)
    assert np.array_equal(first.flatten(), second.flatten())
    assert log1.mean_rewards == log2.mean_rewards


def test_thread_count_does_not_change_the_result(closed_kg):
    cfg = RewardConfig(use_relevance=False, epochs=2, batch_size=2, rollouts=5, **SMALL)
    hypotheses = [hypothesis(closed_kg, "drug", "treats", "disease"),
                  hypothesis(closed_kg, "drug2", "treats", "disease")]
    serial, _ = train(closed_kg, hypotheses, cfg, threads=1)
    parallel, _ = train(closed_kg, hypotheses, cfg, threads=3)
    assert np.array_equal(serial.flatten(), parallel.flatten())


def test_non_finite_gradient_raises(closed_kg):
    cfg = RewardConfig(use_relevance=False, **SMALL)
    params = _params(closed_kg)
    h = hypothesis(closed_kg, "drug", "treats", "disease")
    trajectories = sample_rollouts(closed_kg, params, h, cfg, seed=6)
    for traj in trajectories:
        traj.reward = 1.0
    poisoned = params.copy()
    poisoned.mlp_b2[...] = np.nan
    with pytest.raises(TrainingError) as info:
        reinforce_update(poisoned, trajectories, cfg, TrainerState())
    assert info.value.diagnostics["non_finite"]


def test_early_stop_ends_at_first_arrival():
    """With early stop, rewarded paths end where they first reach the object"""
    kg = graph_from_labels([("a", "r", "b"), ("b", "r", "c"), ("c", "r", "a"), ("b", "r", "d"), ("a", "s", "c")])
    kg = add_inverse_edges(kg)
    h = hypothesis(kg, "a", "r", "b")
    params = PolicyParameters.zeros(kg.num_entities, kg.num_relations, 4, 4, 4)

    cfg = RewardConfig(use_relevance=False, use_early_stop=True, rollouts=100, max_len=3,
                       mask_hypothesis_edge=False)
    for traj in sample_rollouts(kg, params, h, cfg, seed=0):
        if h.object in traj.visited:
            assert traj.visited.index(h.object) == len(traj.visited) - 1
        if traj.reward > 0:
            assert traj.final_entity == h.object

    no_stop = cfg.model_copy(update={"use_early_stop": False})
    continued = [t for t in sample_rollouts(kg, params, h, no_stop, seed=0)
                 if h.object in t.visited and t.final_entity != h.object]
    assert continued


def test_planted_path_is_learned():
    """The policy learns drug -binds-> gene -assoc-> disease and ranks held-out answers"""
    print("Testing planted-path learning...")
    kg, train_hypotheses, test_hypotheses = planted_graph(seed=0)
    assert kg.num_entities == 60
    cfg = RewardConfig(use_relevance=False, use_early_stop=False, max_len=2, rollouts=30, epochs=60,
                       batch_size=1, max_steps=300, lr=0.03, entropy_weight=0.0, entity_dim=16,
                       relation_dim=16, hidden_dim=32, init_scale=0.1, seed=0)
    params, log = train(kg, train_hypotheses, cfg)
    assert len(log) == 300

    result = evaluate(kg, params, test_hypotheses, cfg, beam_width=20)
    random_mrr = float(np.mean(1.0 / np.arange(1, kg.num_entities + 1)))
    assert result.hits10 >= 0.8
    assert result.mrr >= 5 * random_mrr
    print(f"✓ MRR {result.mrr:.3f}, Hits@10 {result.hits10:.2f}")


def _arrival_ranks(kg, params, hypotheses, beam_width, max_len):
    """Ranks when every entity a kept expansion reaches counts as an answer"""
    ranks = []
    for h in hypotheses:
        best = {}
        for entry in beam_search_paths(kg, params, h.subject, h.relation, beam_width, max_len,
                                       include_arrivals=True):
            target = entry.path.target
            best[target] = max(best.get(target, -np.inf), entry.log_prob)
        ranked = sorted(best, key=lambda e: (-best[e], e))
        ranks.append(rank_of_target(ranked, h.object))
    return ranks


def test_default_agent_learns_the_planted_path():
    """Early stop and relevance on, three hops, scored by the IC table"""
    print("Testing planted-path learning with the default reward...")
    kg, train_hypotheses, test_hypotheses = planted_graph(seed=0)
    table = compute_ic_table(kg, ICMode.IC)
    cfg = RewardConfig(use_relevance=True, use_early_stop=True, max_len=3, rollouts=30, epochs=60,
                       batch_size=1, max_steps=300, lr=0.03, entropy_weight=0.0, entity_dim=16,
                       relation_dim=16, hidden_dim=32, init_scale=0.1, seed=0)
    params, log = train(kg, train_hypotheses, cfg, ic_table=table)
    assert len(log) == 300
    assert np.mean([r.mean_fidelity for r in log.records[-20:]]) > 0.5

    result = evaluate(kg, params, test_hypotheses, cfg, beam_width=20, ic_table=table)
    random_mrr = float(np.mean(1.0 / np.arange(1, kg.num_entities + 1)))
    assert result.hits10 >= 0.8
    assert result.mrr >= 5 * random_mrr
    assert result.relevances and all(0.0 <= v <= 1.0 for v in result.relevances)

    # an intermediate hop always outscores its own extension, so arrival ranking buries the target
    arrival = mrr(_arrival_ranks(kg, params, test_hypotheses, 20, cfg.max_len))
    assert arrival < result.mrr
    print(f"✓ MRR {result.mrr:.3f} at termination, {arrival:.3f} on arrival")


def _two_family_graph(n_queries=20, n_junk=30):
    """
    Every subject s_i reaches t_i through one rare intermediate (relations
    pa, qa) or two hub-like intermediates (pb, qb). Hub intermediates get
    their degree from incoming junk edges, which the agent cannot follow
    since the graph is not closed under inverses.
    """
    triples = []
    for i in range(n_queries):
        triples += [(f"s{i}", "pa", f"a{i}"), (f"a{i}", "qa", f"t{i}")]
        for b in (f"b{i}", f"c{i}"):
            triples += [(f"s{i}", "pb", b), (b, "qb", f"t{i}")]
            triples += [(f"j{k}", "junk", b) for k in range(n_junk)]
    train_ids = range(0, n_queries, 2)
    triples += [(f"s{i}", "treats", f"t{i}") for i in train_ids]
    kg = graph_from_labels(triples)
    train_h = [hypothesis(kg, f"s{i}", "treats", f"t{i}") for i in train_ids]
    test_h = [hypothesis(kg, f"s{i}", "treats", f"t{i}") for i in range(1, n_queries, 2)]
    return kg, train_h, test_h


def _rare_family_rate(kg, params, hypotheses):
    rare = kg.relation_id("pa")
    wins = 0
    for h in hypotheses:
        entries = [e for e in beam_search_paths(kg, params, h.subject, h.relation, beam_width=10, max_len=2)
                   if e.path.target == h.object]
        best = max(entries, key=lambda e: e.log_prob)
        wins += best.path.triples[0].relation == rare
    return wins / len(hypotheses)


def test_relevance_reward_prefers_rare_intermediates():
    print("Testing relevance-reward direction...")
    kg, train_h, test_h = _two_family_graph()
    table = compute_ic_table(kg, ICMode.IC)
    a, b = kg.entity_id("a0"), kg.entity_id("b0")
    assert table.score(a) > table.score(b)

    base = RewardConfig(use_early_stop=True, max_len=2, rollouts=30, epochs=20, batch_size=1, lr=0.02,
                        entropy_weight=0.0, seed=0, **SMALL)
    full, _ = train(kg, train_h, base, ic_table=table)
    fidelity_only, _ = train(kg, train_h, base.model_copy(update={"use_relevance": False}), ic_table=table)

    full_rate = _rare_family_rate(kg, full, test_h)
    fidelity_rate = _rare_family_rate(kg, fidelity_only, test_h)
    assert full_rate >= 0.7
    assert full_rate > fidelity_rate
    print(f"✓ rare family on top: REx {full_rate:.2f}, -r {fidelity_rate:.2f}")
