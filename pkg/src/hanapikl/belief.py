"""Distributions over the acting player's own hidden hand.

Two implementations share one sampling interface:

* ``ExactBelief`` enumerates every count- and hint-consistent hand for the
  current slots and weights it by the probability that a reference partner
  policy would have produced the observed actions. Tractable for mini
  configurations only (guarded by an enumeration cap).
* ``LearnedBelief`` is an autoregressive MLP over hand slots ordered oldest
  to newest, trained on cross-play streams; samples are drawn slot by slot
  under the hint masks and live card counts, and completions that run out of
  consistent cards are rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .engine import (
    AOH,
    GameConfig,
    Observation,
    new_game_from_deck,
    start_histories,
)
from .features import ENCODER_SCHEMA_VERSION, FeatureEncoder
from .nets import MLP, Adam, clip_grads, cross_entropy_grad
from .policies import Policy


class BeliefError(RuntimeError):
    pass


class BeliefCapError(BeliefError):
    """Enumeration would exceed the cap; use a learned belief instead."""


DEFAULT_ENUMERATION_CAP = 10 ** 6
PRIOR_FLOOR = -18.0  # log-prior for impossible cards; residual head can't resurrect them


# -- history reconstruction ----------------------------------------------------


def _allowed_types(config: GameConfig, mask: tuple[int, int]) -> list[int]:
    cm, rm = mask
    nr = config.num_ranks
    return [
        color * nr + rank
        for color in range(config.colors) if cm >> color & 1
        for rank in range(nr) if rm >> rank & 1
    ]


def _my_draw_identities(aoh: AOH, hypothesis: tuple[int, ...]) -> list[int]:
    """Identity of every card this seat ever drew, in draw order.

    Cards that left the hand were revealed when they left; cards still held
    are pinned by the hypothesis (current hand order is birth order).
    """
    cfg = aoh.config
    h = cfg.hand_size
    ids = list(range(h))
    next_id = h
    identity: dict[int, int] = {}
    deck_size = cfg.deck_size - cfg.num_players * h
    for ev in aoh.events:
        if ev.action >= 2 * h:
            continue
        drew = deck_size > 0 and ev.status == 0
        if ev.player == aoh.seat:
            slot = ev.action if ev.action < h else ev.action - h
            identity[ids.pop(slot)] = ev.revealed
            if drew:
                ids.append(next_id)
                next_id += 1
        if drew:
            deck_size -= 1
    if len(ids) != len(hypothesis):
        raise BeliefError(
            f"hypothesis length {len(hypothesis)} != current hand size {len(ids)}"
        )
    for inst, card in zip(ids, hypothesis):
        identity[inst] = card
    return [identity[i] for i in range(next_id)]


def reconstruct_draw_order(aoh: AOH, hypothesis: tuple[int, ...]) -> list[int]:
    """Full deck draw order implied by a hypothesis for the current hand.

    The prefix (deal plus all draws so far) is exact; the unseen remainder is
    appended in canonical order and may be reshuffled by the caller.
    """
    cfg = aoh.config
    h = cfg.hand_size
    mine = _my_draw_identities(aoh, hypothesis)
    theirs = list(aoh.initial_partner_hand)
    my_next = h
    draws: list[int] = []
    deck_size = cfg.deck_size - cfg.num_players * h
    for ev in aoh.events:
        if ev.action >= 2 * h or deck_size <= 0 or ev.status != 0:
            continue
        if ev.player == aoh.seat:
            draws.append(mine[my_next])
            my_next += 1
        else:
            if ev.drawn is None:
                raise BeliefError("partner draw missing from the history")
            draws.append(ev.drawn)
        deck_size -= 1
    deal = mine[:h] + theirs[:h] if aoh.seat == 0 else theirs[:h] + mine[:h]
    prefix = deal + draws
    counts = cfg.card_counts()
    for card in prefix:
        counts[card] -= 1
        if counts[card] < 0:
            raise BeliefError("hypothesis uses more copies than exist")
    tail = [card for card, n in enumerate(counts) for _ in range(n)]
    return prefix + tail


def hypothesis_likelihood(aoh: AOH, hypothesis: tuple[int, ...],
                          partner_policy: Policy) -> float:
    """P(observed partner actions | hypothesis), zero on any inconsistency."""
    cfg = aoh.config
    try:
        draw_order = reconstruct_draw_order(aoh, hypothesis)
    except BeliefError:
        return 0.0
    state = new_game_from_deck(cfg, draw_order)
    partner = 1 - aoh.seat
    histories = start_histories(state)
    likelihood = 1.0
    for ev in aoh.events:
        if state.active_player == partner:
            probs = partner_policy.action_probabilities(histories[partner])
            p = float(probs[ev.action])
            if p <= 0.0:
                return 0.0
            likelihood *= p
        outcome = state.step(ev.action)
        if outcome.hinted_slots != ev.hinted_slots:
            return 0.0  # hint pattern contradicts the hypothesized hand
        if outcome.revealed != ev.revealed:
            return 0.0
        histories[partner].record(outcome, state)
    return likelihood


# -- exact enumeration ----------------------------------------------------------


@dataclass
class ExactBelief:
    """Enumerated posterior over the acting seat's current hand."""

    aoh: AOH
    partner_policy: Policy
    hands: list[tuple[int, ...]]
    weights: np.ndarray

    def slot_marginals(self) -> np.ndarray:
        """(hand_size, num_card_types) marginal distribution per slot."""
        obs = self.aoh.observation
        cfg = self.aoh.config
        out = np.zeros((obs.own_hand_size, cfg.num_card_types))
        for hand, w in zip(self.hands, self.weights):
            for slot, card in enumerate(hand):
                out[slot, card] += w
        return out

    def sample(self, n: int, rng: np.random.Generator) -> list[tuple[int, ...]]:
        idx = rng.choice(len(self.hands), size=n, p=self.weights)
        return [self.hands[i] for i in idx]


def enumerate_consistent_hands(obs: Observation, cap: int = DEFAULT_ENUMERATION_CAP):
    """All ordered hands satisfying hint masks and visible-count limits,
    each with its count prior (sequential falling copy counts)."""
    cfg = obs.config
    counts = obs.unseen_counts()
    allowed = [
        [t for t in _allowed_types(cfg, obs.own_knowledge[slot]) if counts[t] > 0]
        for slot in range(obs.own_hand_size)
    ]
    bound = 1
    for options in allowed:
        bound *= max(1, len(options))
    if bound > cap:
        raise BeliefCapError(
            f"{bound} candidate hands exceed the cap of {cap}; use a learned belief"
        )
    hands: list[tuple[int, ...]] = []
    priors: list[float] = []
    hand: list[int] = []

    def dfs(slot: int, prior: float):
        if slot == len(allowed):
            hands.append(tuple(hand))
            priors.append(prior)
            return
        for t in allowed[slot]:
            if counts[t] <= 0:
                continue
            counts[t] -= 1
            hand.append(t)
            dfs(slot + 1, prior * (counts[t] + 1))
            hand.pop()
            counts[t] += 1

    dfs(0, 1.0)
    return hands, np.asarray(priors)


def exact_belief(aoh: AOH, partner_policy: Policy,
                 config: GameConfig | None = None,
                 cap: int = DEFAULT_ENUMERATION_CAP) -> ExactBelief:
    """Posterior over the acting seat's hand given the partner's policy.

    Each candidate's weight is its count prior times the probability that
    ``partner_policy`` takes every observed partner action in the full replay
    the candidate implies.
    """
    del config  # carried by the history itself
    obs = aoh.observation
    hands, priors = enumerate_consistent_hands(obs, cap=cap)
    weights = np.zeros(len(hands))
    for i, hand in enumerate(hands):
        weights[i] = priors[i] * hypothesis_likelihood(aoh, hand, partner_policy)
    keep = weights > 0
    if not keep.any():
        raise BeliefError(
            "no consistent hand explains the history; the partner deviated "
            "from the reference policy"
        )
    hands = [h for h, k in zip(hands, keep) if k]
    weights = weights[keep]
    weights /= weights.sum()
    return ExactBelief(aoh=aoh, partner_policy=partner_policy,
                       hands=hands, weights=weights)


# -- learned autoregressive model ------------------------------------------------


class LearnedBelief:
    """Autoregressive hand model: p(c_1) p(c_2 | c_1) ... over slots
    oldest to newest, with an explicit empty-slot token for short hands."""

    def __init__(self, config: GameConfig, net: MLP):
        self.config = config
        self.net = net
        self.encoder = FeatureEncoder(config, None)
        self.vocab = config.num_card_types + 1  # + empty token
        self.empty_token = config.num_card_types
        self.base_dim = self.encoder.dim + config.num_card_types  # + unseen fractions
        expected = self.base_dim + (config.hand_size - 1) * self.vocab + config.hand_size
        if net.sizes[0] != expected or net.sizes[-1] != self.vocab:
            raise ValueError("network shape does not match the belief input layout")
        self.input_dim = expected

    @classmethod
    def fresh(cls, config: GameConfig, hidden=(192, 128), seed: int = 0) -> "LearnedBelief":
        encoder = FeatureEncoder(config, None)
        vocab = config.num_card_types + 1
        dim = (encoder.dim + config.num_card_types
               + (config.hand_size - 1) * vocab + config.hand_size)
        # zero-init output: the model starts exactly at the count prior
        return cls(config, MLP((dim, *hidden, vocab), seed=seed, zero_last=True))

    def content_features(self, obs: Observation) -> np.ndarray:
        """Shared encoding plus per-type unseen-copy fractions (the count prior)."""
        counts = np.asarray(obs.unseen_counts(), dtype=np.float64)
        total = counts.sum()
        frac = counts / total if total > 0 else counts
        return np.concatenate([self.encoder.encode(obs, None), frac])

    def rows(self, feat: np.ndarray, prev: np.ndarray, slot: int) -> np.ndarray:
        """Input rows for one slot: ``prev`` is (n, slot) previous card ids."""
        n = prev.shape[0]
        x = np.zeros((n, self.input_dim), dtype=np.float64)
        x[:, : self.base_dim] = feat
        base = self.base_dim
        for k in range(prev.shape[1]):
            x[np.arange(n), base + k * self.vocab + prev[:, k]] = 1.0
        x[:, base + (self.config.hand_size - 1) * self.vocab + slot] = 1.0
        return x

    def prior_logits(self, counts: np.ndarray, slot: int, hand_size: int,
                     allowed: np.ndarray | None = None) -> np.ndarray:
        """Log of the hint-and-count sequential prior; the net learns a residual.

        ``counts`` is (n, num_card_types) remaining unseen copies after the
        previous slots' cards are removed; ``allowed`` is an optional (n, T)
        mask of types the slot's hint knowledge still permits.
        """
        n, t = counts.shape
        base = np.full((n, self.vocab), PRIOR_FLOOR)
        if slot >= hand_size:
            base[:, self.empty_token] = 0.0
            return base
        eligible = counts > 0
        if allowed is not None:
            eligible = eligible & allowed
        masked_counts = np.where(eligible, counts, 0)
        totals = masked_counts.sum(axis=1, keepdims=True).clip(min=1)
        with np.errstate(divide="ignore"):
            logp = np.log(masked_counts.clip(min=1) / totals)
        base[:, :t] = np.where(eligible, logp, PRIOR_FLOOR)
        return base

    def _slot_masks(self, obs: Observation) -> np.ndarray:
        """(hand_size, T) hint-consistent types for each occupied slot."""
        out = np.zeros((self.config.hand_size, self.config.num_card_types), dtype=bool)
        for slot in range(obs.own_hand_size):
            out[slot, _allowed_types(self.config, obs.own_knowledge[slot])] = True
        return out

    def _sequential_rows(self, obs: Observation, hand: tuple[int, ...]):
        """Teacher-forced (inputs, prior bases, targets) for all slots."""
        cfg = self.config
        feat = self.content_features(obs)
        padded = list(hand) + [self.empty_token] * (cfg.hand_size - len(hand))
        counts = np.asarray(obs.unseen_counts(), dtype=np.int64)
        masks = self._slot_masks(obs)
        xs, bases = [], []
        for slot in range(cfg.hand_size):
            prev = np.asarray(padded[:slot], dtype=np.int64).reshape(1, -1)
            xs.append(self.rows(feat, prev, slot)[0])
            bases.append(
                self.prior_logits(counts[None, :], slot, len(hand), masks[slot][None, :])[0]
            )
            if slot < len(hand):
                counts[padded[slot]] -= 1
        return xs, bases, padded

    def conditionals(self, obs: Observation, prev_cards: tuple[int, ...]) -> np.ndarray:
        """Distribution over the card vocabulary for the next slot."""
        feat = self.content_features(obs)
        prev = np.asarray([prev_cards], dtype=np.int64).reshape(1, -1)
        counts = np.asarray(obs.unseen_counts(), dtype=np.int64)
        for c in prev_cards:
            counts[c] -= 1
        counts = counts.clip(min=0)
        slot = len(prev_cards)
        allowed = None
        if slot < obs.own_hand_size:
            allowed = self._slot_masks(obs)[slot][None, :]
        logits = self.net.forward(self.rows(feat, prev, slot))[0]
        logits = logits + self.prior_logits(counts[None, :], slot,
                                            obs.own_hand_size, allowed)[0]
        z = logits - logits.max()
        p = np.exp(z)
        return p / p.sum()

    def log_likelihood(self, obs: Observation, hand: tuple[int, ...]) -> float:
        """Teacher-forced log p(hand), padded with the empty token."""
        xs, bases, padded = self._sequential_rows(obs, hand)
        logits = self.net.forward(np.stack(xs)) + np.stack(bases)
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        return float(logp[np.arange(len(padded)), padded].sum())

    def sample_hands(self, view, n: int, rng: np.random.Generator,
                     strict: bool = True, attempts_factor: int = 100):
        """Draw ``n`` hint- and count-consistent hands.

        Slots are sampled autoregressively with inconsistent cards masked
        out; a partial hand whose remaining slots have no consistent card
        left is rejected. Raises after ``attempts_factor * n`` attempts in
        strict mode; otherwise returns the survivors.
        """
        obs = view.observation if isinstance(view, AOH) else view
        cfg = self.config
        h_now = obs.own_hand_size
        feat = self.content_features(obs)
        base_counts = np.asarray(obs.unseen_counts(), dtype=np.int64)
        slot_allowed = np.zeros((h_now, self.vocab), dtype=bool)
        for slot in range(h_now):
            slot_allowed[slot, _allowed_types(cfg, obs.own_knowledge[slot])] = True

        out: list[tuple[int, ...]] = []
        attempts = 0
        budget = attempts_factor * n
        while len(out) < n and attempts < budget:
            m = min(max(n - len(out), 32), budget - attempts)
            attempts += m
            counts = np.tile(base_counts, (m, 1))
            prev = np.zeros((m, 0), dtype=np.int64)
            alive = np.ones(m, dtype=bool)
            for slot in range(h_now):
                rows = self.rows(feat, prev, slot)
                allowed_types = slot_allowed[slot][None, : cfg.num_card_types]
                logits = self.net.forward(rows) + self.prior_logits(
                    counts, slot, h_now, np.broadcast_to(allowed_types, counts.shape)
                )
                allowed = allowed_types & (
                    counts[:, : cfg.num_card_types] > 0
                )
                has_option = allowed.any(axis=1)
                alive &= has_option
                masked = np.where(
                    np.concatenate([allowed, np.zeros((m, 1), dtype=bool)], axis=1),
                    logits, -np.inf,
                )
                masked[~alive] = 0.0  # keep the softmax finite for dead rows
                z = masked - masked.max(axis=1, keepdims=True)
                p = np.exp(z)
                p /= p.sum(axis=1, keepdims=True)
                cdf = np.cumsum(p, axis=1)
                u = rng.random((m, 1))
                choice = (cdf < u).sum(axis=1).clip(max=self.vocab - 1)
                choice[~alive] = self.empty_token
                # alive rows always pick a real card; dead rows decrement nothing
                counts[np.arange(m), np.minimum(choice, cfg.num_card_types - 1)] -= (
                    alive.astype(np.int64)
                )
                prev = np.concatenate([prev, choice[:, None]], axis=1)
            for i in range(m):
                if alive[i] and len(out) < n:
                    out.append(tuple(int(c) for c in prev[i]))
        if len(out) < n and strict:
            raise BeliefError(
                f"hand sampling exhausted its budget: {len(out)}/{n} accepted "
                f"({len(out) / max(attempts, 1):.1%} acceptance)"
            )
        return out


def sample_hands(belief, view, n: int, rng: np.random.Generator, strict: bool = True):
    """Uniform front door over exact and learned beliefs."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(belief, ExactBelief):
        return belief.sample(n, rng)
    return belief.sample_hands(view, n, rng, strict=strict)


# -- training --------------------------------------------------------------------


@dataclass
class BeliefTrainConfig:
    epochs: int = 10
    games_per_epoch: int = 400
    val_games: int = 80
    hidden: tuple[int, ...] = (192, 128)
    learning_rate: float = 2e-3
    batch_size: int = 128
    inner_passes: int = 2  # optimizer passes over each epoch's fresh stream
    weight_decay: float = 1e-4  # shrinks the residual toward the restricted prior
    grad_clip: float = 10.0
    seed: int = 0
    pi_lambda: float | None = None
    rho_lambda: float | None = None


def _collect_rows(model: LearnedBelief, pi: Policy, rho: Policy, config: GameConfig,
                  n_games: int, seed0: int, pi_lambda=None, rho_lambda=None):
    """Cross-play games, keeping only the believed-about seat's samples."""
    from .engine import new_game

    xs, bases, ys = [], [], []
    for g in range(n_games):
        pi_seat = g % 2

        def actor_for(policy, lam):
            return lambda aoh: policy.act_greedy(aoh, lam)

        actors = [None, None]
        actors[pi_seat] = actor_for(pi, pi_lambda)
        actors[1 - pi_seat] = actor_for(rho, rho_lambda)

        # run manually: the believed-about seat's true hand is the target
        st = new_game(config, seed0 + g)
        hist = start_histories(st)
        while not st.is_terminal:
            seat = st.active_player
            action = actors[seat](hist[seat])
            if seat == pi_seat:
                x, b, padded = model._sequential_rows(
                    hist[seat].observation, tuple(st.hands[seat])
                )
                xs.extend(x)
                bases.extend(b)
                ys.extend(padded)
            outcome = st.step(action)
            for a in hist:
                a.record(outcome, st)
    return np.stack(xs), np.stack(bases), np.asarray(ys, dtype=np.int64)


def train_belief(pi: Policy, rho: Policy, config: GameConfig,
                 hyper: BeliefTrainConfig | None = None) -> LearnedBelief:
    """Fit the autoregressive model on a fresh cross-play stream.

    Data comes only from ``pi``'s seats; each epoch generates new games.
    Returns the parameters with the best held-out per-card log-likelihood.
    """
    hyper = hyper or BeliefTrainConfig()
    model = LearnedBelief.fresh(config, hidden=hyper.hidden, seed=hyper.seed)
    opt = Adam(model.net.params, lr=hyper.learning_rate, weight_decay=hyper.weight_decay)
    rng = np.random.Generator(np.random.PCG64(hyper.seed))

    x_val, b_val, y_val = _collect_rows(
        model, pi, rho, config, hyper.val_games, seed0=10 ** 7,
        pi_lambda=hyper.pi_lambda, rho_lambda=hyper.rho_lambda,
    )
    best = (-np.inf, None)
    history = []
    for epoch in range(hyper.epochs):
        x, b, y = _collect_rows(
            model, pi, rho, config, hyper.games_per_epoch,
            seed0=epoch * hyper.games_per_epoch,
            pi_lambda=hyper.pi_lambda, rho_lambda=hyper.rho_lambda,
        )
        for _ in range(hyper.inner_passes):
            order = rng.permutation(len(x))
            for lo in range(0, len(order), hyper.batch_size):
                idx = order[lo:lo + hyper.batch_size]
                cache = []
                logits = model.net.forward(x[idx], cache) + b[idx]
                _, dlogits = cross_entropy_grad(logits, y[idx])
                grads = model.net.backward(cache, dlogits)
                clip_grads(grads, hyper.grad_clip)
                opt.step(model.net.params, grads)

        logits = model.net.forward(x_val) + b_val
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        val_ll = float(logp[np.arange(len(y_val)), y_val].mean())
        history.append(val_ll)
        if val_ll > best[0]:
            best = (val_ll, [p.copy() for p in model.net.params])

    n_w = len(model.net.weights)
    model.net.weights = best[1][:n_w]
    model.net.biases = best[1][n_w:]
    model.train_history = {"val_log_likelihood": history, "best": best[0]}
    return model


# -- checkpointing ----------------------------------------------------------------


def save_belief(path, belief: LearnedBelief):
    meta = {
        "kind": "belief",
        "encoder_schema": ENCODER_SCHEMA_VERSION,
        "config": belief.config.to_dict(),
        "config_hash": belief.config.hash(),
    }
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             **belief.net.state_arrays())


def load_belief(path, config: GameConfig) -> LearnedBelief:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        arrays = {k: data[k] for k in data.files if k != "__meta__"}
    if meta["config_hash"] != config.hash():
        raise BeliefError("belief checkpoint was built for a different configuration")
    if meta["encoder_schema"] != ENCODER_SCHEMA_VERSION:
        raise BeliefError("belief checkpoint uses an incompatible encoder schema")
    return LearnedBelief(config, MLP.from_arrays(arrays))
