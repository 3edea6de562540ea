"""Policy contracts: masking, determinism, scripted skill ordering hooks."""

import numpy as np
import pytest

from hanapikl.driver import run_game
from hanapikl.engine import MINI_CONFIG, GameConfig, new_game, observe
from hanapikl.nets import MLP
from hanapikl.features import FeatureEncoder
from hanapikl.policies import (
    ApproximatorPolicy,
    CheckpointError,
    QApproximatorPolicy,
    ScriptedHumanPolicy,
    UniformRandomPolicy,
    load_policy,
    policy_eval,
    save_policy,
)


def random_walk_obs(config, seed, moves):
    state = new_game(config, seed=seed)
    rng = np.random.Generator(np.random.PCG64(seed * 7 + 1))
    for _ in range(moves):
        if state.is_terminal:
            return None
        legal = state.legal_action_indices()
        state.step(legal[rng.integers(len(legal))])
    if state.is_terminal:
        return None
    return observe(state, state.active_player)


def scripted_actor(policy, greedy=True, rng=None):
    return lambda aoh: policy.act(aoh, rng=rng, greedy=greedy)


class TestUniform:
    def test_seven_legal_actions_each_one_seventh(self):
        policy = UniformRandomPolicy(MINI_CONFIG)
        for seed in range(200):
            obs = random_walk_obs(MINI_CONFIG, seed, moves=3)
            if obs is None:
                continue
            legal = obs.legal_action_indices()
            if len(legal) != 7:
                continue
            probs = policy_eval(policy, obs)
            assert np.allclose(probs[legal], 1.0 / 7.0)
            return
        pytest.fail("no state with exactly 7 legal actions found")

    def test_masking_contract_fuzz(self):
        policy = UniformRandomPolicy(MINI_CONFIG)
        checked = 0
        for seed in range(60):
            for moves in (0, 2, 5, 9):
                obs = random_walk_obs(MINI_CONFIG, seed, moves)
                if obs is None:
                    continue
                probs = policy_eval(policy, obs)
                legal = set(obs.legal_action_indices())
                assert abs(probs.sum() - 1.0) < 1e-9
                for a in range(MINI_CONFIG.num_actions):
                    if a not in legal:
                        assert probs[a] == 0.0
                checked += 1
        assert checked > 100


class TestScripted:
    def test_noise_zero_deterministic_trajectory(self):
        cfg = MINI_CONFIG
        p = ScriptedHumanPolicy(cfg, "medium", noise=0.0, seed=0)
        rec1 = run_game(cfg, [scripted_actor(p), scripted_actor(p)], seed=5)
        rec2 = run_game(cfg, [scripted_actor(p), scripted_actor(p)], seed=5)
        assert rec1.to_dict() == rec2.to_dict()

    def test_noise_one_equals_uniform_distribution(self):
        p = ScriptedHumanPolicy(MINI_CONFIG, "medium", noise=1.0, seed=0)
        obs = random_walk_obs(MINI_CONFIG, 3, 2)
        legal = obs.legal_action_indices()
        probs = policy_eval(p, obs)
        assert np.allclose(probs[legal], 1.0 / len(legal))

    def test_distribution_matches_mixture(self):
        p = ScriptedHumanPolicy(MINI_CONFIG, "medium", noise=0.2, seed=0)
        obs = random_walk_obs(MINI_CONFIG, 3, 2)
        legal = obs.legal_action_indices()
        probs = policy_eval(p, obs)
        choice = p._choose(obs)
        assert np.isclose(probs[choice], 0.8 + 0.2 / len(legal))
        assert np.isclose(probs.sum(), 1.0)

    def test_masking_contract_fuzz(self):
        for skill in ("weak", "medium", "strong"):
            p = ScriptedHumanPolicy(MINI_CONFIG, skill, noise=0.15, seed=1)
            for seed in range(25):
                obs = random_walk_obs(MINI_CONFIG, seed, 4)
                if obs is None:
                    continue
                probs = policy_eval(p, obs)
                legal = set(obs.legal_action_indices())
                assert abs(probs.sum() - 1.0) < 1e-9
                assert all(probs[a] == 0.0 for a in range(MINI_CONFIG.num_actions)
                           if a not in legal)

    def test_plays_certain_card(self):
        # Hint the acting player's rank-0 cards: they become certainly
        # playable (both colors still need rank 0) and must be played.
        cfg = MINI_CONFIG
        deck = sorted(cfg.full_deck())  # p0 holds three rank-0 cards of color 0
        from hanapikl.engine import Action, new_game_from_deck
        state = new_game_from_deck(cfg, deck)
        state.step(Action("hint_rank", 1).to_index(cfg))  # p0 stalls: hints p1
        outcome = state.step(Action("hint_rank", 0).to_index(cfg))  # p1 hints p0
        assert outcome.hinted_slots == (0, 1, 2)
        p = ScriptedHumanPolicy(cfg, "weak", noise=0.0)
        obs = observe(state, 0)
        action = p.act_greedy(obs)
        assert action in (0, 1, 2)  # play one of the known rank-0 cards


class TestApproximator:
    def make_policy(self, vocab=None):
        enc = FeatureEncoder(MINI_CONFIG, vocab)
        net = MLP((enc.dim, 32, MINI_CONFIG.num_actions), seed=0)
        return ApproximatorPolicy(MINI_CONFIG, net, vocab)

    def test_masking_and_normalization(self):
        policy = self.make_policy()
        obs = random_walk_obs(MINI_CONFIG, 11, 3)
        probs = policy_eval(policy, obs)
        legal = set(obs.legal_action_indices())
        assert abs(probs.sum() - 1.0) < 1e-9
        assert all(probs[a] == 0.0 for a in range(MINI_CONFIG.num_actions) if a not in legal)

    def test_argmax_tie_break_lowest_index(self):
        policy = self.make_policy()
        for w in policy.net.weights:
            w[:] = 0.0
        for b in policy.net.biases:
            b[:] = 0.0
        obs = random_walk_obs(MINI_CONFIG, 11, 3)
        assert policy.act_greedy(obs) == min(obs.legal_action_indices())

    def test_checkpoint_roundtrip(self, tmp_path):
        policy = self.make_policy(vocab=(1, 2, 5, 10))
        path = tmp_path / "p.npz"
        save_policy(path, policy)
        loaded = load_policy(path, MINI_CONFIG)
        obs = random_walk_obs(MINI_CONFIG, 11, 3)
        assert np.array_equal(policy_eval(policy, obs, 5), policy_eval(loaded, obs, 5))
        assert loaded.lambda_vocabulary == (1, 2, 5, 10)

    def test_checkpoint_config_hash_guard(self, tmp_path):
        policy = self.make_policy()
        path = tmp_path / "p.npz"
        save_policy(path, policy)
        with pytest.raises(CheckpointError):
            load_policy(path, GameConfig())

    def test_scripted_checkpoint_roundtrip(self, tmp_path):
        policy = ScriptedHumanPolicy(MINI_CONFIG, "strong", noise=0.05, seed=3)
        path = tmp_path / "s.npz"
        save_policy(path, policy)
        loaded = load_policy(path, MINI_CONFIG)
        assert isinstance(loaded, ScriptedHumanPolicy)
        assert (loaded.skill, loaded.noise, loaded.seed) == ("strong", 0.05, 3)

    def test_q_policy_greedy_vs_soft_probabilities(self, tmp_path):
        enc = FeatureEncoder(MINI_CONFIG, None)
        net = MLP((enc.dim, 16, MINI_CONFIG.num_actions), seed=2)
        q = QApproximatorPolicy(MINI_CONFIG, net, temperature=0.5)
        obs = random_walk_obs(MINI_CONFIG, 11, 3)
        probs = policy_eval(q, obs)
        legal = obs.legal_action_indices()
        assert abs(probs.sum() - 1.0) < 1e-9
        assert q.act_greedy(obs) in legal
        assert probs[q.act_greedy(obs)] == probs[legal].max()
        path = tmp_path / "q.npz"
        save_policy(path, q)
        loaded = load_policy(path, MINI_CONFIG)
        assert np.array_equal(policy_eval(q, obs), policy_eval(loaded, obs))
