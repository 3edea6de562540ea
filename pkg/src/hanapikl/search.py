"""Anchored Monte-Carlo search over belief-sampled hands.

Each decision samples private hands from a belief, resets a simulator to the
implied full state, forces one candidate action, and rolls the game to
termination with the searcher following a rollout policy and the partner
following a partner model. Action values are mean undiscounted final-score
deltas. The act rule mixes those values with the log-probabilities of an
anchor policy, weighted by a regularization strength.

Rollouts across all candidate actions advance in lockstep so approximator
policies evaluate in one batch per step.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .belief import ExactBelief, sample_hands
from .engine import AOH, GameState, Observation, canonical_json
from .nets import NEG_INF
from .policies import ApproximatorPolicy, Policy, QApproximatorPolicy


@dataclass
class SearchParams:
    """Knobs for one search decision.

    ``rollout_lambda`` / ``partner_lambda`` condition the respective policies
    when they take a skill input; the anchor is always evaluated untouched.
    """

    lambda_reg: float
    rollouts_m: int
    anchor_policy: Policy
    rollout_policy: Policy
    partner_model: Policy
    mode: str = "greedy"  # "greedy" | "sample"
    rollout_lambda: float | None = None
    partner_lambda: float | None = None

    def __post_init__(self):
        if self.lambda_reg <= 0:
            raise ValueError("the regularization strength must be positive")
        if self.mode not in ("greedy", "sample"):
            raise ValueError(f"unknown act mode {self.mode!r}")


@dataclass
class QEstimate:
    legal_actions: list[int]
    values: np.ndarray  # full action space; nan on illegal actions
    counts: np.ndarray  # rollouts per action
    stderr: np.ndarray  # Monte-Carlo standard error per action
    shortfall: int = 0  # rollouts lost to rejected hand samples

    def value(self, action: int) -> float:
        return float(self.values[action])


def state_from_observation(obs: Observation, own_hand: tuple[int, ...],
                           rng: np.random.Generator | None,
                           deck_order: list[int] | None = None) -> GameState:
    """Materialize a full state consistent with a view and a hand hypothesis.

    The unseen remainder (everything outside the view and the hypothesis)
    becomes the deck, shuffled by ``rng``; pass ``deck_order`` to pin it
    instead (exhaustive-expectation oracles need that).
    """
    cfg = obs.config
    counts = obs.unseen_counts()
    for card in own_hand:
        counts[card] -= 1
        if counts[card] < 0:
            raise ValueError("hand hypothesis uses more copies than remain unseen")
    if deck_order is not None:
        tally = list(counts)
        for card in deck_order:
            tally[card] -= 1
        if any(t != 0 for t in tally):
            raise ValueError("deck_order is not a permutation of the unseen remainder")
        deck = np.asarray(deck_order, dtype=np.int64)[::-1]  # draw order -> stack
    else:
        deck = [card for card, n in enumerate(counts) for _ in range(n)]
        if len(deck) != obs.deck_size:
            raise ValueError("hypothesis inconsistent with the observed deck size")
        deck = np.asarray(deck, dtype=np.int64)
        rng.shuffle(deck)

    state = GameState.__new__(GameState)
    state.config = cfg
    state.deck = deck.tolist()
    hands = [None, None]
    hands[obs.seat] = list(own_hand)
    hands[1 - obs.seat] = list(obs.partner_hand)
    state.hands = hands
    knowledge = [None, None]
    knowledge[obs.seat] = list(obs.own_knowledge)
    knowledge[1 - obs.seat] = list(obs.partner_knowledge)
    state.knowledge = knowledge
    state.fireworks = list(obs.fireworks)
    state.hint_tokens = obs.hint_tokens
    state.lives = obs.lives
    state.discard_counts = list(obs.discard_counts)
    state.active_player = obs.seat
    state.turns_left = obs.turns_left
    state.score = obs.score
    state.status = 0
    state.turn_count = obs.turn_count
    state.last_outcome = None
    return state


def _policy_lambda(seat: int, searcher: int, params: SearchParams):
    if seat == searcher:
        return params.rollout_policy, params.rollout_lambda
    return params.partner_model, params.partner_lambda


def _rollout_to_end(sims: list[GameState], returns: np.ndarray, searcher: int,
                    params: SearchParams) -> None:
    """Advance all non-terminal simulators in lockstep until every game ends.

    Turn order is round-robin, so live simulators always share one acting
    seat and one policy; approximator policies get a single batched forward.
    """
    from .engine import observe

    active = [i for i, st in enumerate(sims) if not st.is_terminal]
    while active:
        seat = sims[active[0]].active_player
        policy, lam = _policy_lambda(seat, searcher, params)
        observations = [observe(sims[i], seat) for i in active]
        if isinstance(policy, (ApproximatorPolicy, QApproximatorPolicy)):
            feats = np.stack([
                policy.encoder.encode(o, lam) for o in observations
            ]).astype(np.float64)
            masks = np.zeros((len(active), sims[0].config.num_actions), dtype=bool)
            for row, o in enumerate(observations):
                masks[row, o.legal_action_indices()] = True
            logits = policy.net.forward(feats)
            actions = np.where(masks, logits, NEG_INF).argmax(axis=1)
        else:
            actions = [policy.act_greedy(o, lam) for o in observations]
        still = []
        for row, i in enumerate(active):
            outcome = sims[i].step(int(actions[row]))
            returns[i] += outcome.reward
            if not sims[i].is_terminal:
                still.append(i)
        active = still


def estimate_q(aoh: AOH, belief, params: SearchParams,
               rng: np.random.Generator) -> QEstimate:
    """Monte-Carlo action values with the budget split evenly across actions.

    The remainder of ``rollouts_m`` modulo the number of legal actions goes
    to the lowest-indexed actions. Hand samples rejected by the belief reduce
    the affected action's count rather than being retried forever.
    """
    obs = aoh.observation
    cfg = obs.config
    legal = obs.legal_action_indices()
    if params.rollouts_m < len(legal):
        raise ValueError("rollout budget smaller than the number of legal actions")
    base, rem = divmod(params.rollouts_m, len(legal))
    budgets = {a: base + (1 if i < rem else 0) for i, a in enumerate(sorted(legal))}

    hands = sample_hands(belief, aoh, params.rollouts_m, rng, strict=False)
    shortfall = params.rollouts_m - len(hands)

    sims: list[GameState] = []
    owners: list[int] = []
    cursor = 0
    for action in sorted(legal):
        take = budgets[action]
        chunk = hands[cursor:cursor + take]
        cursor += take
        for hand in chunk:
            sim = state_from_observation(obs, hand, rng)
            sims.append(sim)
            owners.append(action)
    returns = np.zeros(len(sims))
    for i, sim in enumerate(sims):
        returns[i] += sim.step(owners[i]).reward
    _rollout_to_end(sims, returns, obs.seat, params)

    values = np.full(cfg.num_actions, np.nan)
    counts = np.zeros(cfg.num_actions, dtype=np.int64)
    stderr = np.full(cfg.num_actions, np.nan)
    owners_arr = np.asarray(owners)
    for action in legal:
        sel = returns[owners_arr == action] if len(sims) else np.array([])
        counts[action] = len(sel)
        if len(sel):
            values[action] = float(sel.mean())
            stderr[action] = float(sel.std(ddof=1) / np.sqrt(len(sel))) if len(sel) > 1 else np.inf
    return QEstimate(legal_actions=sorted(legal), values=values, counts=counts,
                     stderr=stderr, shortfall=shortfall)


def pikl_distribution(q: QEstimate | np.ndarray, anchor_probs: np.ndarray,
                      lambda_reg: float,
                      legal_actions: list[int] | None = None) -> np.ndarray:
    """Softmax of log(anchor) + Q/lambda over the legal actions.

    Computed in log space for numerical stability; anchor-zero actions stay
    at probability zero. All-zero anchors over the legal set are rejected.
    """
    if lambda_reg <= 0:
        raise ValueError("the regularization strength must be positive")
    if isinstance(q, QEstimate):
        legal = q.legal_actions
        values = q.values
    else:
        values = np.asarray(q, dtype=float)
        legal = legal_actions if legal_actions is not None else list(range(len(values)))
    n = len(anchor_probs)
    scores = np.full(n, -np.inf)
    for a in legal:
        pa = anchor_probs[a]
        if pa > 0 and np.isfinite(values[a]):
            scores[a] = np.log(pa) + values[a] / lambda_reg
    if not np.isfinite(scores).any():
        raise ValueError("anchor assigns zero probability to every legal action")
    z = scores - scores[np.isfinite(scores)].max()
    probs = np.where(np.isfinite(z), np.exp(z), 0.0)
    return probs / probs.sum()


def greedy_scores(q: QEstimate | np.ndarray, anchor_probs: np.ndarray,
                  lambda_reg: float,
                  legal_actions: list[int] | None = None) -> np.ndarray:
    """lambda * log(anchor) + Q, the argmax-equivalent form of the act rule."""
    if isinstance(q, QEstimate):
        legal = q.legal_actions
        values = q.values
    else:
        values = np.asarray(q, dtype=float)
        legal = legal_actions if legal_actions is not None else list(range(len(values)))
    scores = np.full(len(anchor_probs), -np.inf)
    for a in legal:
        pa = anchor_probs[a]
        if pa > 0 and np.isfinite(values[a]):
            scores[a] = lambda_reg * np.log(pa) + values[a]
    return scores


def pikl_act(aoh: AOH, belief, params: SearchParams, rng: np.random.Generator,
             trace=None) -> int:
    """One search decision: estimate values, then apply the act rule."""
    t0 = time.perf_counter()
    q = estimate_q(aoh, belief, params, rng)
    anchor = params.anchor_policy.action_probabilities(aoh)
    if params.mode == "greedy":
        scores = greedy_scores(q, anchor, params.lambda_reg)
        if not np.isfinite(scores).any():
            raise ValueError("anchor assigns zero probability to every legal action")
        action = int(np.argmax(scores))
    else:
        probs = pikl_distribution(q, anchor, params.lambda_reg)
        action = int(rng.choice(len(probs), p=probs))
    if trace is not None:
        trace.write(aoh, q, anchor, params, action, time.perf_counter() - t0)
    return action


class SearchTrace:
    """Optional JSON-lines log of per-decision search internals."""

    def __init__(self, fh):
        self.fh = fh

    @staticmethod
    def _view_hash(obs: Observation) -> str:
        key = canonical_json([
            obs.seat, list(obs.fireworks), obs.hint_tokens, obs.lives,
            list(obs.discard_counts), list(obs.partner_hand),
            [list(k) for k in obs.own_knowledge],
            [list(k) for k in obs.partner_knowledge],
            obs.deck_size, obs.turns_left, obs.turn_count,
        ])
        return hashlib.sha1(key.encode()).hexdigest()[:16]

    def write(self, aoh: AOH, q: QEstimate, anchor: np.ndarray,
              params: SearchParams, action: int, wall_time: float):
        entry = {
            "view": self._view_hash(aoh.observation),
            "q": {str(a): round(q.value(a), 6) for a in q.legal_actions},
            "anchor": {str(a): round(float(anchor[a]), 6) for a in q.legal_actions},
            "lambda": params.lambda_reg,
            "chosen": action,
            "wall_time": round(wall_time, 6),
        }
        self.fh.write(json.dumps(entry, sort_keys=True) + "\n")


class SearchPolicy(Policy):
    """Policy wrapper that runs one search per turn.

    ``action_probabilities`` is a point mass on the searched action (sampled
    mode draws internally), so evaluation harnesses can treat it like any
    deterministic policy.
    """

    kind = "search"

    def __init__(self, config, belief, params: SearchParams, seed: int = 0, trace=None):
        super().__init__(config)
        self.belief = belief
        self.params = params
        self.rng = np.random.Generator(np.random.PCG64(seed))
        self.trace = trace

    def act_greedy(self, view, lambda_condition=None) -> int:
        if not isinstance(view, AOH):
            raise ValueError("search policies need the full action-observation history")
        return pikl_act(view, self.belief, self.params, self.rng, trace=self.trace)

    def action_probabilities(self, view, lambda_condition=None) -> np.ndarray:
        probs = np.zeros(self.config.num_actions)
        probs[self.act_greedy(view)] = 1.0
        return probs


# Budget used at full scale, and the factor this desk-scale build divides it
# by when wrapping a trained policy for live play.
FULL_SCALE_TEST_TIME_ROLLOUTS = 5000
DESK_SCALE_DIVISOR = 25


def test_time_agent(br_policy: Policy, partner_model: Policy, belief,
                    lambda_reg: float = 2.0,
                    rollouts: int = FULL_SCALE_TEST_TIME_ROLLOUTS // DESK_SCALE_DIVISOR,
                    seed: int = 0, trace=None) -> SearchPolicy:
    """Wrap a trained policy in high-regularization greedy search.

    The wrapped policy anchors to itself and rolls out with itself, assuming
    the partner follows ``partner_model``; the high default regularization
    keeps it on-anchor unless rollouts reveal a large value gap (the
    out-of-distribution blunder case).
    """
    params = SearchParams(
        lambda_reg=lambda_reg,
        rollouts_m=rollouts,
        anchor_policy=br_policy,
        rollout_policy=br_policy,
        partner_model=partner_model,
        mode="greedy",
    )
    return SearchPolicy(br_policy.config, belief, params, seed=seed, trace=trace)


test_time_agent.__test__ = False  # not a pytest case, despite the name
