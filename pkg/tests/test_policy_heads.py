"""
Tests for the attention heads, safety masks and the single-forward decision path.
"""

import itertools
import math

import numpy as np
import pytest

from src.core.schema import PolicyConfig
from src.core.env import STATE_DIM
from src.agents.nn import softmax
from src.agents.explain import attention_digest
from src.agents.policy import (
    ActorNetwork, MultiAgentPolicy, mask_actions, confidence_mask, describe_action,
    semantic_attention, temporal_attention, cross_slice_attention, confidence_attention,
    counterfactual_attention, meta_fuse,
    candidate_features, HEAD_NAMES, N_FACTORS
)


def make_actor(**overrides) -> ActorNetwork:
    config = PolicyConfig(**{"hidden_size": 8, "history_window": 3, "key_dim": 4, **overrides})
    return ActorNetwork(0, config, np.random.default_rng(2))


def run(actor: ActorNetwork, seed: int = 0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=STATE_DIM)
    history = rng.normal(size=(actor.config.history_window, STATE_DIM))
    mask = np.ones((N_FACTORS, len(actor.config.deltas)), dtype=bool)
    return actor.forward(x, history, mask)


# =============================================================================
# HEADS
# =============================================================================

def test_softmax_oracle():
    z = np.zeros(6)
    z[:3] = [2.0, 1.0, 0.0]
    expected = np.exp(z) / np.exp(z).sum()
    np.testing.assert_allclose(softmax(z), expected, atol=1e-12)
    assert softmax(np.array([1000.0, 0.0, 0.0]))[0] == 1.0


def test_single_slot_history_gets_full_weight():
    cache = run(make_actor(history_window=1))
    assert cache.temp.tolist() == [1.0]


def test_identical_history_slots_are_uniform():
    actor = make_actor()
    x = np.random.default_rng(4).normal(size=STATE_DIM)
    history = np.tile(x, (3, 1))
    cache = actor.forward(x, history, np.ones((N_FACTORS, 5), dtype=bool))
    np.testing.assert_allclose(cache.temp, np.full(3, 1 / 3), atol=1e-12)


def test_temporal_matches_scaled_dot_product():
    actor = make_actor()
    cache = run(actor, seed=6)
    p = actor.params
    scores = (cache.history @ p["Wk"].T) @ (p["Wq"] @ cache.h2) / math.sqrt(4)
    np.testing.assert_allclose(cache.temp, softmax(scores), atol=1e-12)


def test_identical_embeddings_give_uniform_cross_slice():
    actor = make_actor()
    actor.params["We"][...] = 0.0
    actor.params["be"][...] = 0.0
    cache = run(actor)
    np.testing.assert_allclose(cache.cross, np.full((3, 3), 1 / 3), atol=1e-12)


def test_confidence_from_semantic_entropy():
    actor = make_actor()
    actor.params["Ws"][...] = 0.0

    actor.params["bs"][...] = 0.0
    actor.params["bs"][7] = 1000.0
    assert run(actor).conf == pytest.approx(1.0, abs=1e-12)

    actor.params["bs"][...] = 0.0
    assert run(actor).conf == pytest.approx(0.0, abs=1e-12)

    actor.params["bs"][:2] = 1000.0
    assert run(actor).conf == pytest.approx(1.0 - math.log(2) / math.log(STATE_DIM), abs=1e-12)


def test_identical_candidate_scores_are_uniform():
    actor = make_actor()
    actor.params["Wcf"][...] = 0.0
    actor.params["bcf"][...] = 0.0
    cache = run(actor)
    np.testing.assert_allclose(cache.cf, np.full(actor.config.n_candidates, 1 / actor.config.n_candidates))


def test_meta_one_hot_on_semantic_returns_semantic():
    actor = make_actor()
    actor.params["Wm"][...] = 0.0
    actor.params["bm"][...] = 0.0
    actor.params["bm"][HEAD_NAMES.index("semantic")] = 1000.0
    cache = run(actor)
    np.testing.assert_allclose(cache.fused, cache.sem, atol=1e-12)


def test_fused_attention_is_a_distribution():
    cache = run(make_actor(), seed=9)
    assert np.all(cache.fused >= 0)
    assert cache.fused.sum() == pytest.approx(1.0, abs=1e-12)
    assert cache.meta.shape == (len(HEAD_NAMES),)


def test_fused_attention_moves_continuously():
    actor = make_actor()
    rng = np.random.default_rng(12)
    x = rng.normal(size=STATE_DIM)
    history = rng.normal(size=(3, STATE_DIM))
    mask = np.ones((N_FACTORS, 5), dtype=bool)
    phi = actor.forward(x, history, mask).phi
    base = actor.forward(x, history, mask, phi=phi).fused
    jumps = []
    for h in (1e-3, 1e-4, 1e-5):
        bumped = x.copy()
        bumped[3] += h
        jumps.append(np.abs(actor.forward(bumped, history, mask, phi=phi).fused - base).max() / h)
    # the empirical Lipschitz ratio stays bounded as the step shrinks
    assert max(jumps) < 10.0 * jumps[0] + 1e-9


def test_head_functions_match_oracles():
    scores = np.zeros(STATE_DIM)
    scores[:3] = [2.0, 1.0, 0.0]
    np.testing.assert_allclose(semantic_attention(scores), np.exp(scores) / np.exp(scores).sum(), atol=1e-12)

    keys = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    query = np.array([0.5, -0.5])
    raw = np.array([0.5, -0.5, 0.0]) / math.sqrt(2)
    np.testing.assert_allclose(temporal_attention(query, keys), np.exp(raw) / np.exp(raw).sum(), atol=1e-12)

    semantic = np.zeros(STATE_DIM)
    semantic[:2] = 0.5
    assert confidence_attention(semantic) == pytest.approx(1.0 - math.log(2) / math.log(STATE_DIM), abs=1e-12)

    phi = np.array([[0.0, 0.0, 0.0, 1.0], [1.0, 0.0, 0.0, 0.0], [0.0, -1.0, 1.0, 0.0]])
    u = np.array([0.3, 0.2, -0.4, 0.1])
    s = phi @ u
    np.testing.assert_allclose(counterfactual_attention(phi, u), np.exp(s) / np.exp(s).sum(), atol=1e-12)


def test_dominant_key_draws_every_cross_slice_row():
    queries = np.ones((3, 2))
    keys = np.array([[0.0, 0.0], [5.0, 5.0], [0.0, 0.0]])
    cross = cross_slice_attention(queries, keys)
    assert (cross.argmax(axis=1) == 1).all()
    np.testing.assert_allclose(cross.sum(axis=1), 1.0, atol=1e-12)


def test_meta_fuse_composition():
    views = np.full((len(HEAD_NAMES), STATE_DIM), 1.0 / STATE_DIM)
    meta = np.full(len(HEAD_NAMES), 1.0 / len(HEAD_NAMES))
    np.testing.assert_allclose(meta_fuse(meta, views), np.full(STATE_DIM, 1.0 / STATE_DIM), atol=1e-15)

    rng = np.random.default_rng(3)
    views = rng.dirichlet(np.ones(STATE_DIM), size=len(HEAD_NAMES))
    meta = rng.dirichlet(np.ones(len(HEAD_NAMES)))
    expected = sum(meta[i] * views[i] for i in range(len(HEAD_NAMES)))
    np.testing.assert_allclose(meta_fuse(meta, views), expected / expected.sum(), atol=1e-12)


# =============================================================================
# MASKS
# =============================================================================

DELTAS = (-0.10, -0.05, 0.0, 0.05, 0.10)


def test_mask_at_budget_ceiling_blocks_increases():
    shares = np.array([[0.4, 0.4, 0.4], [0.3, 0.3, 0.3], [0.3, 0.3, 0.3]])
    mask = mask_actions(shares, DELTAS, 0.05)
    assert not mask[:, :, 3:].any()
    assert mask[:, :, 2].all()


def test_mask_at_floor_blocks_decreases():
    shares = np.full((3, 3), 0.05)
    mask = mask_actions(shares, DELTAS, 0.05)
    assert not mask[:, :, :2].any()
    assert mask[:, :, 2:].all()


def test_mask_matches_enumeration():
    rng = np.random.default_rng(21)
    for _ in range(20):
        shares = rng.dirichlet(np.ones(4), size=3)[:, :3].T.copy()
        mask = mask_actions(shares, DELTAS, 0.05)
        for n, r, k in itertools.product(range(3), range(3), range(5)):
            d = DELTAS[k]
            new = shares[n, r] + d
            feasible = d == 0.0 or (0.05 - 1e-12 <= new <= 1.0 + 1e-12 and shares[:, r].sum() + d <= 1.0 + 1e-12)
            assert mask[n, r, k] == feasible


def test_confidence_gate_limits_step_size():
    assert confidence_mask(DELTAS, 0.9, 0.2).all()
    assert confidence_mask(DELTAS, 0.1, 0.2).tolist() == [False, True, True, True, False]


# =============================================================================
# DECISIONS
# =============================================================================

def test_zero_parameters_give_uniform_policy(small_config):
    policy = MultiAgentPolicy(small_config.policy, seed=1)
    policy.zero_parameters()
    shares = np.array([s.initial_shares for s in small_config.sim.slices])
    decision = policy.act(np.zeros(STATE_DIM), policy.empty_history(), shares, greedy=True)
    for agent in decision.agents:
        np.testing.assert_allclose(agent.bundle.fused, np.full(STATE_DIM, 1 / STATE_DIM), atol=1e-12)
        assert agent.bundle.confidence == pytest.approx(0.0, abs=1e-12)
        for f in range(N_FACTORS):
            allowed = agent.mask[f]
            np.testing.assert_allclose(agent.probs[f][allowed], 1.0 / allowed.sum(), atol=1e-12)
            assert np.all(agent.probs[f][~allowed] == 0.0)


def test_one_forward_per_decision(policy, small_config, rng):
    shares = np.array([s.initial_shares for s in small_config.sim.slices])
    obs = rng.normal(size=STATE_DIM)
    first = policy.act(obs, policy.empty_history(), shares, greedy=True)
    second = policy.act(obs, policy.empty_history(), shares, greedy=True)
    assert policy.forward_count == 2
    assert first.attention_sha256 == second.attention_sha256
    assert first.attention_sha256 == attention_digest(first.joint_attention)
    assert first.joint_attention.shape == (3, STATE_DIM)
    np.testing.assert_array_equal(first.actions, second.actions)


def test_sampled_actions_respect_masks(policy, small_config, rng):
    shares = np.array([[0.4, 0.4, 0.4], [0.3, 0.3, 0.3], [0.3, 0.3, 0.3]])
    for _ in range(20):
        decision = policy.act(rng.normal(size=STATE_DIM), policy.empty_history(), shares, rng=rng)
        new, clamps = policy.apply(shares, decision)
        assert clamps == 0
        assert np.all(new.sum(axis=0) <= 1.0 + 1e-12)
        for agent in decision.agents:
            for f in range(N_FACTORS):
                assert agent.mask[f, agent.action[f]]


def test_candidates_start_with_noop(policy, small_config, rng):
    shares = np.array([s.initial_shares for s in small_config.sim.slices])
    decision = policy.act(rng.normal(size=STATE_DIM), policy.empty_history(), shares, greedy=True)
    for agent in decision.agents:
        np.testing.assert_array_equal(agent.phi[0], candidate_features(np.zeros(3)))
        assert agent.bundle.candidate_labels[0] == "no-op"
        assert len(agent.bundle.candidate_labels) == small_config.policy.n_candidates


def test_describe_action():
    assert describe_action(0, (0.0, 0.0, 0.0)) == "no-op"
    assert describe_action(1, (-0.05, 0.0, 0.1)) == "eMBB power -5%, compute +10%"


def test_candidates_skip_masked_actions(policy, rng):
    floor = policy.config.share_floor
    shares = np.array([[floor] * 3, [0.45] * 3, [1.0 - 0.45 - floor] * 3])
    deltas = np.asarray(policy.config.deltas)
    noop = candidate_features(np.zeros(3))
    decision = policy.act(rng.normal(size=STATE_DIM), policy.empty_history(), shares, greedy=True)

    pinned = decision.agents[0]
    assert pinned.mask.sum() == N_FACTORS
    for row in pinned.phi:
        np.testing.assert_array_equal(row, noop)
    assert set(pinned.bundle.candidate_labels) == {"no-op"}

    for agent in decision.agents:
        assert len(agent.phi) == policy.config.n_candidates
        for row in agent.phi:
            for f in range(N_FACTORS):
                k = int(np.argmin(np.abs(deltas - row[f] / 10.0)))
                assert agent.mask[f, k]
