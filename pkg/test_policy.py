"""Test the LSTM policy and its hand-written gradients"""
import numpy as np
import pytest

from conftest import hypothesis
from rex.application.schemas.config_schemas import RewardConfig
from rex.application.services.graph_service import add_inverse_edges
from rex.application.services.policy import (
    History,
    PolicyParameters,
    batch_loss_and_gradients,
    policy_forward,
)
from rex.application.services.trainer import gradient_check, sample_rollouts
from rex.domain.models.trajectory import Action
from rex.errors import ContractViolation


def _params(kg, seed=0, scale=0.5, dims=(6, 5, 7)):
    de, dr, hidden = dims
    return PolicyParameters.initialize(kg.num_entities, kg.num_relations, de, dr, hidden, seed=seed, scale=scale)


def _batch(kg, params, h, n=4, max_len=3):
    """A few sampled trajectories paired with mixed-sign advantages"""
    cfg = RewardConfig(use_relevance=False, rollouts=n, max_len=max_len, mask_hypothesis_edge=False)
    trajectories = sample_rollouts(kg, params, h, cfg, seed=3)
    advantages = [1.0, -0.5, 0.25, -1.5, 0.75, 2.0][:n]
    return list(zip(trajectories, advantages))


@pytest.fixture
def closed_kg(toy_kg):
    return add_inverse_edges(toy_kg)


def test_single_action_has_probability_one(closed_kg):
    params = _params(closed_kg)
    history = History.start(closed_kg.entity_id("drug"), closed_kg.relation_id("treats"))
    probs = policy_forward(params, history, [Action.stop()])
    assert probs.shape == (1,)
    assert probs[0] == pytest.approx(1.0)


def test_probabilities_form_a_distribution(closed_kg):
    params = _params(closed_kg, seed=4)
    drug = closed_kg.entity_id("drug")
    history = History.start(drug, closed_kg.relation_id("treats")).extend(
        closed_kg.relation_id("binds"), closed_kg.entity_id("gene1"))
    candidates = np.vstack([closed_kg.neighbor_array(closed_kg.entity_id("gene1")), [[-1, -1]]])
    probs = policy_forward(params, history, candidates)
    assert np.all(probs > 0)
    assert probs.sum() == pytest.approx(1.0)


def test_permuting_candidates_permutes_probabilities(closed_kg):
    params = _params(closed_kg, seed=1)
    drug = closed_kg.entity_id("drug")
    history = History.start(drug, closed_kg.relation_id("treats"))
    candidates = np.vstack([closed_kg.neighbor_array(drug), [[-1, -1]]])
    probs = policy_forward(params, history, candidates)
    perm = np.random.default_rng(0).permutation(len(candidates))
    permuted = policy_forward(params, history, candidates[perm])
    assert np.allclose(permuted, probs[perm])


def test_zero_weights_give_uniform_distribution(closed_kg):
    params = PolicyParameters.zeros(closed_kg.num_entities, closed_kg.num_relations, 4, 4, 4)
    drug = closed_kg.entity_id("drug")
    candidates = np.vstack([closed_kg.neighbor_array(drug), [[-1, -1]]])
    probs = policy_forward(params, History.start(drug, 0), candidates)
    assert np.allclose(probs, 1.0 / len(candidates))


def test_empty_candidate_set_is_rejected(closed_kg):
    params = _params(closed_kg)
    with pytest.raises(ContractViolation):
        policy_forward(params, History.start(0, 0), [])


def test_history_changes_the_distribution(closed_kg):
    params = _params(closed_kg, seed=2)
    drug, gene = closed_kg.entity_id("drug"), closed_kg.entity_id("gene1")
    candidates = np.vstack([closed_kg.neighbor_array(gene), [[-1, -1]]])
    short = History(drug, closed_kg.relation_id("treats"), [(-2, gene)])
    longer = History.start(drug, closed_kg.relation_id("treats")).extend(closed_kg.relation_id("binds"), gene)
    assert not np.allclose(policy_forward(params, short, candidates), policy_forward(params, longer, candidates))


def test_parameter_vector_round_trip(closed_kg):
    params = _params(closed_kg, seed=5)
    restored = params.unflatten(params.flatten())
    assert restored.num_parameters() == params.num_parameters()
    assert all(np.array_equal(a, getattr(restored, name)) for name, a in params.items())


def test_gradient_check_at_zero_weights(closed_kg):
    """Every single-coordinate perturbation leaves the loss flat at zero weights"""
    params = PolicyParameters.zeros(closed_kg.num_entities, closed_kg.num_relations, 3, 3, 4)
    h = hypothesis(closed_kg, "drug", "treats", "disease")
    batch = _batch(closed_kg, params, h)
    assert gradient_check(params, batch, epsilon=1e-5, max_coordinates=10_000) < 1e-6


def test_gradient_check_at_random_weights(closed_kg):
    print("Testing analytic gradients against central differences...")
    h = hypothesis(closed_kg, "drug", "treats", "disease")
    for seed in range(3):
        params = _params(closed_kg, seed=seed)
        batch = _batch(closed_kg, params, h)
        error = gradient_check(params, batch, epsilon=1e-5, entropy_weight=0.05, max_coordinates=300, seed=seed)
        assert error < 1e-3
    print("✓ Gradients agree")


def test_large_epsilon_degrades_gradient_check(closed_kg):
    h = hypothesis(closed_kg, "drug", "treats", "disease")
    params = _params(closed_kg, seed=7, scale=1.0)
    batch = _batch(closed_kg, params, h)
    fine = gradient_check(params, batch, epsilon=1e-5, max_coordinates=10_000)
    coarse = gradient_check(params, batch, epsilon=1.0, max_coordinates=10_000)
    assert coarse > fine


def test_zero_advantage_without_entropy_has_zero_gradient(closed_kg):
    params = _params(closed_kg, seed=8)
    h = hypothesis(closed_kg, "drug", "treats", "disease")
    batch = [(traj, 0.0) for traj, _ in _batch(closed_kg, params, h)]
    loss, grads = batch_loss_and_gradients(params, batch, entropy_weight=0.0)
    assert loss == 0.0
    assert grads.global_norm() == 0.0
