"""Exact belief vs. brute-force deal enumeration; learned-belief contracts."""

from itertools import permutations

import numpy as np
import pytest

from hanapikl.belief import (
    BeliefCapError,
    BeliefError,
    LearnedBelief,
    enumerate_consistent_hands,
    exact_belief,
    load_belief,
    sample_hands,
    save_belief,
    train_belief,
)
from hanapikl.driver import histories_from_record, run_game
from hanapikl.engine import (
    MINI_CONFIG,
    Action,
    GameConfig,
    new_game_from_deck,
    observe,
    start_histories,
)
from hanapikl.policies import ScriptedHumanPolicy, UniformRandomPolicy
from hanapikl.records import apply_color_permutation


def uniform_record(config, seed, moves=None):
    rng = np.random.Generator(np.random.PCG64(seed + 991))
    policy = UniformRandomPolicy(config)
    actor = lambda aoh: policy.act(aoh, rng=rng, greedy=False)
    return run_game(config, [actor, actor], seed=seed, max_moves=moves)


def scripted_record(config, seed):
    policy = ScriptedHumanPolicy(config, "medium", noise=0.0)
    actor = lambda aoh: policy.act_greedy(aoh)
    return run_game(config, [actor, actor], seed=seed)


def count_my_draws(aoh):
    """Public arithmetic: how many cards this seat drew after the deal."""
    cfg = aoh.config
    h = cfg.hand_size
    deck_size = cfg.deck_size - cfg.num_players * h
    mine = 0
    for ev in aoh.events:
        if ev.action >= 2 * h or deck_size <= 0 or ev.status != 0:
            continue
        if ev.player == aoh.seat:
            mine += 1
        deck_size -= 1
    return mine


def brute_force_posterior(aoh, partner_policy):
    """Independent oracle: enumerate physical-copy assignments for every card
    this seat ever drew, force-replay the recorded actions, and keep the
    assignments under which the deterministic partner reproduces the record.
    """
    cfg = aoh.config
    obs = aoh.observation
    h = cfg.hand_size
    seat = aoh.seat
    n_draws = count_my_draws(aoh)
    total_slots = h + n_draws

    counts = obs.unseen_counts()
    # my revealed cards (play/discard) are no longer unseen, but they DID
    # occupy my slots: add them back into the assignable pool
    revealed = [ev.revealed for ev in aoh.events
                if ev.player == seat and ev.action < 2 * h]
    pool = list(counts)
    for card in revealed:
        pool[card] += 1
    copies = [t for t, n in enumerate(pool) for _ in range(n)]

    weights: dict[tuple, float] = {}
    for assign in permutations(range(len(copies)), total_slots):
        mine = [copies[i] for i in assign]
        # deck: deal (seat order), then chronological draws, then leftovers
        theirs = list(aoh.initial_partner_hand)
        deal = mine[:h] + theirs if seat == 0 else theirs + mine[:h]
        draws = []
        my_next = h
        deck_size = cfg.deck_size - cfg.num_players * h
        for ev in aoh.events:
            if ev.action >= 2 * h or deck_size <= 0 or ev.status != 0:
                continue
            if ev.player == seat:
                draws.append(mine[my_next])
                my_next += 1
            else:
                draws.append(ev.drawn)
            deck_size -= 1
        prefix = deal + draws
        tally = cfg.card_counts()
        ok = True
        for card in prefix:
            tally[card] -= 1
            if tally[card] < 0:
                ok = False
                break
        if not ok:
            continue
        rest = [card for card, n in enumerate(tally) for _ in range(n)]
        state = new_game_from_deck(cfg, prefix + rest)
        histories = start_histories(state)
        for ev in aoh.events:
            actor = state.active_player
            if actor != seat and partner_policy.act_greedy(histories[actor]) != ev.action:
                ok = False
                break
            outcome = state.step(ev.action)
            if outcome.hinted_slots != ev.hinted_slots or outcome.revealed != ev.revealed:
                ok = False
                break
            for a in histories:
                a.record(outcome, state)
        if ok:
            key = tuple(state.hands[seat])
            weights[key] = weights.get(key, 0.0) + 1.0
    total = sum(weights.values())
    return {k: v / total for k, v in weights.items()}


class TestExactBelief:
    def test_turn_zero_marginals_are_count_frequencies(self):
        rec = uniform_record(MINI_CONFIG, seed=2, moves=0)
        _, histories = histories_from_record(rec, 0)
        belief = exact_belief(histories[0], UniformRandomPolicy(MINI_CONFIG))
        counts = np.asarray(histories[0].observation.unseen_counts(), dtype=float)
        expected = counts / counts.sum()
        marginals = belief.slot_marginals()
        for slot in range(MINI_CONFIG.hand_size):
            assert np.allclose(marginals[slot], expected, atol=1e-12)

    def test_rank_hint_pins_marked_slots(self):
        cfg = MINI_CONFIG
        # p0 holds ranks (0, 1, 2); p1 holds ranks (2, 3, 4) of color 0
        prefix = [0, 1, 2, 2, 3, 4]
        full = cfg.full_deck()
        for c in prefix:
            full.remove(c)
        state = new_game_from_deck(cfg, prefix + full)
        histories = start_histories(state)
        out = state.step(Action("hint_rank", 2).to_index(cfg))  # p0 hints p1
        for a in histories:
            a.record(out, state)
        out = state.step(Action("hint_rank", 1).to_index(cfg))  # p1 hints p0
        for a in histories:
            a.record(out, state)
        assert out.hinted_slots == (1,)
        belief = exact_belief(histories[0], UniformRandomPolicy(cfg))
        for hand in belief.hands:
            assert hand[1] % cfg.num_ranks == 1
            assert hand[0] % cfg.num_ranks != 1
            assert hand[2] % cfg.num_ranks != 1

    def test_matches_brute_force_after_five_moves(self):
        partner = ScriptedHumanPolicy(MINI_CONFIG, "medium", noise=0.0)
        rec = scripted_record(MINI_CONFIG, seed=6)
        # probe the first point where the acting seat has drawn at most one
        # card, keeping the oracle's permutation space small
        probe = None
        for upto in range(4, 7):
            state, histories = histories_from_record(rec, upto)
            if state.is_terminal:
                break
            seat = state.active_player
            if count_my_draws(histories[seat]) <= 1:
                probe = (upto, seat, histories)
                break
        assert probe is not None
        upto, seat, histories = probe
        belief = exact_belief(histories[seat], partner)
        oracle = brute_force_posterior(histories[seat], partner)
        got = {hand: w for hand, w in zip(belief.hands, belief.weights)}
        assert set(got) == set(oracle)
        for hand, w in oracle.items():
            assert abs(got[hand] - w) < 1e-9, hand

    def test_true_hand_in_support(self):
        partner = ScriptedHumanPolicy(MINI_CONFIG, "medium", noise=0.0)
        for seed in (1, 3, 8):
            rec = scripted_record(MINI_CONFIG, seed=seed)
            upto = min(6, len(rec.moves) - 1)
            state, histories = histories_from_record(rec, upto)
            if state.is_terminal:
                continue
            seat = state.active_player
            belief = exact_belief(histories[seat], partner)
            assert tuple(state.hands[seat]) in set(belief.hands)

    def test_color_equivariance_with_uniform_partner(self):
        cfg = MINI_CONFIG
        perm = [1, 0]
        rec = uniform_record(cfg, seed=12, moves=5)
        if len(rec.moves) < 5:
            pytest.skip("game ended too early")
        state, histories = histories_from_record(rec, 5)
        if state.is_terminal:
            pytest.skip("game ended too early")
        seat = state.active_player
        belief = exact_belief(histories[seat], UniformRandomPolicy(cfg))

        prec = apply_color_permutation(rec, perm)
        pstate, phistories = histories_from_record(prec, 5)
        pbelief = exact_belief(phistories[seat], UniformRandomPolicy(cfg))

        from hanapikl.engine import permute_card
        mapped = {
            tuple(permute_card(cfg, perm, c) for c in hand): w
            for hand, w in zip(belief.hands, belief.weights)
        }
        got = dict(zip(pbelief.hands, pbelief.weights))
        assert set(mapped) == set(got)
        for hand in mapped:
            assert abs(mapped[hand] - got[hand]) < 1e-9

    def test_cap_exceeded_directs_to_learned(self):
        cfg = GameConfig()  # full config: 25^5 candidates
        rec = uniform_record(cfg, seed=0, moves=0)
        _, histories = histories_from_record(rec, 0)
        with pytest.raises(BeliefCapError):
            exact_belief(histories[0], UniformRandomPolicy(cfg), cap=10 ** 6)

    def test_empty_support_signals_deviation(self):
        # Replay a uniform-random game but compute the belief against a
        # deterministic partner that would never have produced those moves.
        partner = ScriptedHumanPolicy(MINI_CONFIG, "strong", noise=0.0)
        found = False
        for seed in range(20):
            rec = uniform_record(MINI_CONFIG, seed=seed, moves=6)
            state, histories = histories_from_record(rec, min(6, len(rec.moves)))
            if state.is_terminal:
                continue
            seat = state.active_player
            try:
                exact_belief(histories[seat], partner)
            except BeliefError:
                found = True
                break
        assert found

    def test_exact_sampling_matches_weights(self):
        partner = ScriptedHumanPolicy(MINI_CONFIG, "medium", noise=0.0)
        rec = scripted_record(MINI_CONFIG, seed=6)
        state, histories = histories_from_record(rec, 4)
        seat = state.active_player
        belief = exact_belief(histories[seat], partner)
        rng = np.random.Generator(np.random.PCG64(0))
        draws = sample_hands(belief, histories[seat], 100_000, rng)
        freq = {}
        for hand in draws:
            freq[hand] = freq.get(hand, 0) + 1
        tv = 0.5 * sum(
            abs(freq.get(hand, 0) / 100_000 - w)
            for hand, w in zip(belief.hands, belief.weights)
        )
        assert tv < 0.02


class TestLearnedBelief:
    def test_fresh_model_samples_are_always_consistent(self):
        model = LearnedBelief.fresh(MINI_CONFIG, hidden=(32,), seed=0)
        rng = np.random.Generator(np.random.PCG64(7))
        rec = scripted_record(MINI_CONFIG, seed=3)
        state, histories = histories_from_record(rec, 5)
        seat = state.active_player
        obs = histories[seat].observation
        hands = model.sample_hands(histories[seat], 500, rng)
        assert len(hands) == 500
        counts = obs.unseen_counts()
        from hanapikl.belief import _allowed_types
        for hand in hands:
            assert len(hand) == obs.own_hand_size
            tally = list(counts)
            for slot, card in enumerate(hand):
                assert card in _allowed_types(MINI_CONFIG, obs.own_knowledge[slot])
                tally[card] -= 1
                assert tally[card] >= 0

    def test_fully_hinted_hand_gives_point_mass(self):
        cfg = MINI_CONFIG
        deck = sorted(cfg.full_deck())
        state = new_game_from_deck(cfg, deck)  # p0: three rank-0 color-0 cards
        histories = start_histories(state)
        for action in (Action("hint_rank", 1), Action("hint_rank", 0),
                       Action("hint_rank", 2), Action("hint_color", 0)):
            out = state.step(action.to_index(cfg))
            for a in histories:
                a.record(out, state)
        # p0's entire hand is now pinned to color 0 rank 0
        assert all(k == (1, 1) for k in state.knowledge[0])
        model = LearnedBelief.fresh(cfg, hidden=(32,), seed=1)
        rng = np.random.Generator(np.random.PCG64(0))
        hands = model.sample_hands(histories[0], 200, rng)
        assert all(h == (0, 0, 0) for h in hands)
        partner = UniformRandomPolicy(cfg)
        belief = exact_belief(histories[0], partner)
        assert len(belief.hands) == 1 and belief.hands[0] == (0, 0, 0)

    def test_conditionals_sum_to_one(self):
        model = LearnedBelief.fresh(MINI_CONFIG, hidden=(32,), seed=2)
        rec = scripted_record(MINI_CONFIG, seed=4)
        state, histories = histories_from_record(rec, 3)
        obs = histories[state.active_player].observation
        for prev in ((), (0,), (0, 5)):
            p = model.conditionals(obs, prev)
            assert p.shape == (MINI_CONFIG.num_card_types + 1,)
            assert abs(p.sum() - 1.0) < 1e-9

    def test_checkpoint_roundtrip(self, tmp_path):
        model = LearnedBelief.fresh(MINI_CONFIG, hidden=(16,), seed=3)
        save_belief(tmp_path / "b.npz", model)
        loaded = load_belief(tmp_path / "b.npz", MINI_CONFIG)
        rec = scripted_record(MINI_CONFIG, seed=5)
        state, histories = histories_from_record(rec, 3)
        obs = histories[state.active_player].observation
        assert np.allclose(model.conditionals(obs, ()), loaded.conditionals(obs, ()))
        with pytest.raises(BeliefError):
            load_belief(tmp_path / "b.npz", GameConfig())


class TestTrainBelief:
    @staticmethod
    def _small_hyper(seed=0, epochs=4):
        from hanapikl.belief import BeliefTrainConfig
        return BeliefTrainConfig(epochs=epochs, games_per_epoch=150, val_games=40,
                                 hidden=(96, 64), seed=seed)

    def test_uniform_partners_match_count_prior_at_turn_zero(self):
        cfg = MINI_CONFIG
        uniform = UniformRandomPolicy(cfg)
        model = train_belief(uniform, uniform, cfg, self._small_hyper())
        rec = uniform_record(cfg, seed=5, moves=0)
        _, histories = histories_from_record(rec, 0)
        obs = histories[0].observation
        counts = np.asarray(obs.unseen_counts(), dtype=float)
        prior = counts / counts.sum()
        rng = np.random.Generator(np.random.PCG64(0))
        hands = model.sample_hands(histories[0], 20000, rng)
        emp = np.zeros(cfg.num_card_types)
        for h in hands:
            emp[h[0]] += 1
        emp /= len(hands)
        assert 0.5 * np.abs(emp - prior).sum() < 0.05

    def test_beats_no_history_count_prior_baseline(self):
        cfg = MINI_CONFIG
        pi = ScriptedHumanPolicy(cfg, "medium", noise=0.0)
        model = train_belief(pi, pi, cfg, self._small_hyper(seed=1))
        # held-out stream: fresh scripted games, per-card NLL vs the plain
        # count prior (which ignores all hint history)
        actor = lambda aoh: pi.act_greedy(aoh)
        model_nll, prior_nll, n = 0.0, 0.0, 0
        for seed in range(200, 220):
            rec = run_game(cfg, [actor, actor], seed=seed)
            state, histories = histories_from_record(rec, min(6, len(rec.moves) - 1))
            if state.is_terminal:
                continue
            seat = state.active_player
            obs = histories[seat].observation
            hand = tuple(state.hands[seat])
            model_nll += -model.log_likelihood(obs, hand)
            counts = np.asarray(obs.unseen_counts(), dtype=float)
            seq = counts.copy()
            for c in hand:
                p = seq[c] / seq.sum()
                prior_nll += -np.log(p)
                seq[c] -= 1
            n += len(hand)
        assert n > 0
        assert model_nll / n <= prior_nll / n

    def test_val_log_likelihood_improves_over_first_three_epochs(self):
        cfg = MINI_CONFIG
        pi = ScriptedHumanPolicy(cfg, "medium", noise=0.0)
        model = train_belief(pi, pi, cfg, self._small_hyper(seed=2, epochs=3))
        hist = model.train_history["val_log_likelihood"]
        assert hist[1] >= hist[0] - 1e-6 and hist[2] >= hist[1] - 1e-6
