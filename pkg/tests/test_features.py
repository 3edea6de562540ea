"""Feature encoding: determinism, injectivity, and the condition block."""

import dataclasses

import numpy as np
import pytest

from hanapikl.engine import MINI_CONFIG, AOH, StepOutcome, new_game, observe
from hanapikl.features import FeatureEncoder


def mid_game_observation(seed=4, moves=6):
    state = new_game(MINI_CONFIG, seed=seed)
    rng = np.random.Generator(np.random.PCG64(seed))
    for _ in range(moves):
        if state.is_terminal:
            break
        legal = state.legal_action_indices()
        state.step(legal[rng.integers(len(legal))])
    return observe(state, state.active_player)


class TestLambdaBlock:
    def test_onehot_position(self):
        enc = FeatureEncoder(MINI_CONFIG, (1, 2, 5, 10))
        obs = mid_game_observation()
        vec = enc.encode(obs, 5)
        assert vec[enc.lambda_slice].tolist() == [0.0, 0.0, 1.0, 0.0]

    def test_unconditioned_all_zero(self):
        enc = FeatureEncoder(MINI_CONFIG, (1, 2, 5, 10))
        vec = enc.encode(mid_game_observation(), None)
        assert not vec[enc.lambda_slice].any()

    def test_condition_outside_vocabulary_rejected(self):
        enc = FeatureEncoder(MINI_CONFIG, (1, 2, 5, 10))
        with pytest.raises(ValueError):
            enc.encode(mid_game_observation(), 3)
        with pytest.raises(ValueError):
            FeatureEncoder(MINI_CONFIG, None).encode(mid_game_observation(), 1)


class TestDeterminism:
    def test_same_observation_same_vector(self):
        enc = FeatureEncoder(MINI_CONFIG)
        obs = mid_game_observation()
        assert np.array_equal(enc.encode(obs), enc.encode(obs))

    def test_distinct_histories_same_content_collide(self):
        # Two different event histories wrapping the same view must encode
        # identically: the encoder is a function of the observable content.
        enc = FeatureEncoder(MINI_CONFIG)
        obs = mid_game_observation()
        fake_event = StepOutcome(player=0, action=0, reward=0, status=0)
        a = AOH(MINI_CONFIG, obs.seat, (), events=[], observation=obs)
        b = AOH(MINI_CONFIG, obs.seat, (), events=[fake_event, fake_event], observation=obs)
        assert np.array_equal(enc.encode(a), enc.encode(b))


class TestInjectivity:
    def test_single_field_changes_vector(self):
        enc = FeatureEncoder(MINI_CONFIG)
        obs = mid_game_observation()
        base = enc.encode(obs)
        tweaks = {
            "fireworks": tuple(h + (1 if i == 0 else 0) for i, h in enumerate(obs.fireworks)),
            "hint_tokens": obs.hint_tokens - 1 if obs.hint_tokens > 0 else 1,
            "lives": obs.lives - 1,
            "discard_counts": tuple(
                n + (1 if i == 3 else 0) for i, n in enumerate(obs.discard_counts)
            ),
            "deck_size": obs.deck_size - 1,
            "turns_left": 1,
            "own_knowledge": ((obs.own_knowledge[0][0] ^ 1, obs.own_knowledge[0][1]),)
            + obs.own_knowledge[1:],
            "partner_knowledge": ((obs.partner_knowledge[0][0], obs.partner_knowledge[0][1] ^ 1),)
            + obs.partner_knowledge[1:],
            "partner_hand": (((obs.partner_hand[0] + 1) % MINI_CONFIG.num_card_types),)
            + obs.partner_hand[1:],
            "last_event": StepOutcome(player=1, action=0, reward=1, status=0, revealed=3,
                                      success=True),
        }
        for field, value in tweaks.items():
            mutated = dataclasses.replace(obs, **{field: value})
            assert not np.array_equal(base, enc.encode(mutated)), f"{field} not encoded"

    def test_lambda_dims_disjoint_from_content(self):
        enc = FeatureEncoder(MINI_CONFIG, (1, 2))
        obs = mid_game_observation()
        a, b = enc.encode(obs, 1), enc.encode(obs, 2)
        content = slice(0, enc.lambda_slice.start)
        assert np.array_equal(a[content], b[content])
        assert not np.array_equal(a[enc.lambda_slice], b[enc.lambda_slice])


class TestBlocks:
    def test_block_layout_covers_vector(self):
        enc = FeatureEncoder(MINI_CONFIG, (1, 2, 5, 10))
        assert enc.public_slice.start == 0
        assert enc.private_slice.start == enc.public_slice.stop
        assert enc.lambda_slice.start == enc.private_slice.stop
        assert enc.lambda_slice.stop == enc.dim

    def test_partner_hand_in_private_block_only(self):
        enc = FeatureEncoder(MINI_CONFIG)
        obs = mid_game_observation()
        mutated = dataclasses.replace(
            obs,
            partner_hand=(((obs.partner_hand[0] + 1) % MINI_CONFIG.num_card_types),)
            + obs.partner_hand[1:],
        )
        a, b = enc.encode(obs), enc.encode(mutated)
        assert np.array_equal(a[enc.public_slice], b[enc.public_slice])
        assert not np.array_equal(a[enc.private_slice], b[enc.private_slice])
