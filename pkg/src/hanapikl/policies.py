"""Policy types: scripted heuristics, tabular lookups, and MLP approximators.

Every policy maps a seat's view to a probability distribution over the full
action space with exact zeros on illegal actions. Greedy action selection
breaks ties toward the lowest action index.
"""

from __future__ import annotations

import json

import numpy as np

from .engine import AOH, GameConfig, Observation
from .features import ENCODER_SCHEMA_VERSION, FeatureEncoder
from .nets import MLP, masked_softmax

CHECKPOINT_VERSION = 1


def _obs_of(view) -> Observation:
    return view.observation if isinstance(view, AOH) else view


class Policy:
    """Base policy. Subclasses fill in ``action_probabilities``."""

    kind = "abstract"

    def __init__(self, config: GameConfig, lambda_vocabulary=None):
        self.config = config
        self.lambda_vocabulary = tuple(lambda_vocabulary) if lambda_vocabulary else None
        self.config_hash = config.hash()

    def action_probabilities(self, view, lambda_condition: float | None = None) -> np.ndarray:
        raise NotImplementedError

    def act_greedy(self, view, lambda_condition: float | None = None) -> int:
        probs = self.action_probabilities(view, lambda_condition)
        return int(np.argmax(probs))

    def act(self, view, rng: np.random.Generator | None = None,
            lambda_condition: float | None = None, greedy: bool = True) -> int:
        if greedy or rng is None:
            return self.act_greedy(view, lambda_condition)
        probs = self.action_probabilities(view, lambda_condition)
        return int(rng.choice(len(probs), p=probs))


def policy_eval(policy: Policy, view, lambda_condition: float | None = None) -> np.ndarray:
    """Distribution over the action space; illegal actions have probability 0."""
    return policy.action_probabilities(view, lambda_condition)


class UniformRandomPolicy(Policy):
    kind = "uniform"

    def action_probabilities(self, view, lambda_condition=None) -> np.ndarray:
        obs = _obs_of(view)
        probs = np.zeros(self.config.num_actions)
        legal = obs.legal_action_indices()
        probs[legal] = 1.0 / len(legal)
        return probs


class TabularPolicy(Policy):
    """Lookup table keyed by the full observation; uniform off-table."""

    kind = "tabular"

    def __init__(self, config: GameConfig):
        super().__init__(config)
        self.table: dict = {}

    @staticmethod
    def key(obs: Observation):
        return (obs.seat, obs.fireworks, obs.hint_tokens, obs.lives, obs.discard_counts,
                obs.partner_hand, obs.own_knowledge, obs.partner_knowledge,
                obs.deck_size, obs.turns_left, obs.turn_count)

    def action_probabilities(self, view, lambda_condition=None) -> np.ndarray:
        obs = _obs_of(view)
        got = self.table.get(self.key(obs))
        if got is not None:
            return np.asarray(got, dtype=float)
        probs = np.zeros(self.config.num_actions)
        legal = obs.legal_action_indices()
        probs[legal] = 1.0 / len(legal)
        return probs


# -- scripted heuristic -------------------------------------------------------

SKILL_LEVELS = ("weak", "medium", "strong")


class ScriptedHumanPolicy(Policy):
    """Deterministic hint-convention heuristic with epsilon-uniform noise.

    All levels play cards whose hint knowledge makes them certainly playable
    and give hints that create such certain plays. ``medium`` also gambles on
    probably-playable cards; ``strong`` gambles more carefully and picks
    discards that are provably safe first.
    """

    kind = "scripted"

    def __init__(self, config: GameConfig, skill: str = "medium",
                 noise: float = 0.0, seed: int = 0):
        super().__init__(config)
        if skill not in SKILL_LEVELS:
            raise ValueError(f"skill must be one of {SKILL_LEVELS}")
        if not 0.0 <= noise <= 1.0:
            raise ValueError("noise must be in [0, 1]")
        self.skill = skill
        self.noise = noise
        self.seed = seed
        self.rng = np.random.Generator(np.random.PCG64(seed))

    # consistency pools ------------------------------------------------------

    def _consistent_types(self, mask, counts):
        cfg = self.config
        cm, rm = mask
        nr = cfg.num_ranks
        return [
            color * nr + rank
            for color in range(cfg.colors) if cm >> color & 1
            for rank in range(nr) if rm >> rank & 1
            if counts[color * nr + rank] > 0
        ]

    def _playable(self, card, fireworks) -> bool:
        nr = self.config.num_ranks
        return fireworks[card // nr] == card % nr

    def _dead(self, card, obs) -> bool:
        """True if this card type can never be played again."""
        cfg = self.config
        color, rank = divmod(card, cfg.num_ranks)
        if obs.fireworks[color] > rank:
            return True
        copies = cfg.rank_multiset
        for r in range(obs.fireworks[color], rank + 1):
            t = color * cfg.num_ranks + r
            if copies[r] - obs.discard_counts[t] <= 0 and r < rank:
                return True
        t = color * cfg.num_ranks + rank
        return copies[rank] - obs.discard_counts[t] <= 0

    def _play_probability(self, mask, counts, fireworks) -> float:
        types = self._consistent_types(mask, counts)
        if not types:
            return 0.0
        total = sum(counts[t] for t in types)
        hit = sum(counts[t] for t in types if self._playable(t, fireworks))
        return hit / total

    def _public_counts(self, obs):
        cfg = self.config
        counts = cfg.card_counts()
        for card in range(cfg.num_card_types):
            counts[card] -= obs.discard_counts[card]
        nr = cfg.num_ranks
        for color, height in enumerate(obs.fireworks):
            for rank in range(height):
                counts[color * nr + rank] -= 1
        return counts

    def _hint_enables(self, obs, is_color: bool, value: int, public_counts) -> int:
        """How many new certain plays this hint would create for the partner."""
        cfg = self.config
        nr = cfg.num_ranks
        enabled = 0
        for slot, card in enumerate(obs.partner_hand):
            cm, rm = obs.partner_knowledge[slot]
            c, r = divmod(card, nr)
            if is_color:
                ncm, nrm = ((1 << value), rm) if c == value else (cm & ~(1 << value), rm)
            else:
                ncm, nrm = (cm, (1 << value)) if r == value else (cm, rm & ~(1 << value))
            before = self._play_probability((cm, rm), public_counts, obs.fireworks)
            after = self._play_probability((ncm, nrm), public_counts, obs.fireworks)
            if after == 1.0 and before < 1.0 and self._playable(card, obs.fireworks):
                enabled += 1
        return enabled

    def _hint_progress(self, obs, is_color: bool, value: int, public_counts):
        """Best post-hint play probability over the partner's playable cards."""
        cfg = self.config
        nr = cfg.num_ranks
        best = 0.0
        for slot, card in enumerate(obs.partner_hand):
            if not self._playable(card, obs.fireworks):
                continue
            cm, rm = obs.partner_knowledge[slot]
            c, r = divmod(card, nr)
            if is_color:
                nmask = ((1 << value), rm) if c == value else (cm & ~(1 << value), rm)
            else:
                nmask = (cm, (1 << value)) if r == value else (cm, rm & ~(1 << value))
            before = self._play_probability((cm, rm), public_counts, obs.fireworks)
            after = self._play_probability(nmask, public_counts, obs.fireworks)
            if after > before:
                best = max(best, after)
        return best

    def _legal_hints(self, obs, legal):
        h = self.config.hand_size
        for action in legal:
            if action < 2 * h:
                continue
            is_color = action < 2 * h + self.config.colors
            value = action - 2 * h if is_color else action - 2 * h - self.config.colors
            yield action, is_color, value

    def _choose(self, obs: Observation) -> int:
        cfg = self.config
        h = cfg.hand_size
        nr = cfg.num_ranks
        legal = obs.legal_action_indices()
        counts = obs.unseen_counts()
        full = ((1 << cfg.colors) - 1, (1 << nr) - 1)

        probs = [
            self._play_probability(obs.own_knowledge[slot], counts, obs.fireworks)
            for slot in range(obs.own_hand_size)
        ]

        # 1. play a card known to be playable
        for slot in range(obs.own_hand_size):
            if probs[slot] == 1.0:
                return slot

        # 2. calculated gamble (strong only; never on the last life)
        if self.skill == "strong" and obs.own_hand_size and obs.lives >= 2:
            best = max(range(obs.own_hand_size), key=lambda s: (probs[s], -s))
            if probs[best] >= 0.8:
                return best

        # 3. hints
        can_hint = obs.hint_tokens > 0 and bool(obs.partner_hand)
        if can_hint:
            if self.skill == "weak":
                # beginners point at playable cards by rank, with no follow-up
                for slot, card in enumerate(obs.partner_hand):
                    if self._playable(card, obs.fireworks):
                        rank_action = 2 * h + cfg.colors + card % nr
                        if rank_action in legal:
                            return rank_action
            else:
                public_counts = self._public_counts(obs)
                scored = [
                    (self._hint_enables(obs, is_color, value, public_counts), -action)
                    for action, is_color, value in self._legal_hints(obs, legal)
                ]
                if scored:
                    enables, neg_action = max(scored)
                    if enables > 0:
                        return -neg_action
                if self.skill == "strong":
                    # identify a playable card fully across two hints
                    for slot, card in enumerate(obs.partner_hand):
                        if not self._playable(card, obs.fireworks):
                            continue
                        cm, rm = obs.partner_knowledge[slot]
                        if cm.bit_count() == 1 and rm.bit_count() == 1:
                            continue
                        rank_action = 2 * h + cfg.colors + card % nr
                        color_action = 2 * h + card // nr
                        prefer_color = rm.bit_count() == 1 and cm.bit_count() > 1
                        order = ((color_action, rank_action) if prefer_color
                                 else (rank_action, color_action))
                        for action in order:
                            if action in legal:
                                return action

        # 4. discard
        discardable = [a - h for a in legal if h <= a < 2 * h]
        if discardable:
            if self.skill == "strong":
                for slot in discardable:
                    types = self._consistent_types(obs.own_knowledge[slot], counts)
                    if types and all(self._dead(t, obs) for t in types):
                        return h + slot
                untouched = [s for s in discardable
                             if obs.own_knowledge[s] == full and probs[s] < 1.0]
                if untouched:
                    return h + untouched[0]
                safe = [s for s in discardable if probs[s] < 1.0]
                return h + (safe[0] if safe else discardable[0])
            untouched = [s for s in discardable if obs.own_knowledge[s] == full]
            return h + (untouched[0] if untouched else discardable[0])

        # 5. stall: any hint, then the least-bad play
        if can_hint:
            hint_actions = [a for a in legal if a >= 2 * h]
            if hint_actions:
                return hint_actions[0]
        plays = [a for a in legal if a < h]
        if plays:
            return max(plays, key=lambda s: (probs[s], -s))
        return legal[0]

    def action_probabilities(self, view, lambda_condition=None) -> np.ndarray:
        obs = _obs_of(view)
        legal = obs.legal_action_indices()
        probs = np.zeros(self.config.num_actions)
        if self.noise > 0.0:
            probs[legal] = self.noise / len(legal)
        if self.noise < 1.0:
            probs[self._choose(obs)] += 1.0 - self.noise
        return probs

    def act(self, view, rng=None, lambda_condition=None, greedy: bool = True) -> int:
        if greedy:
            return self.act_greedy(view, lambda_condition)
        use = rng if rng is not None else self.rng
        obs = _obs_of(view)
        if self.noise > 0.0 and use.random() < self.noise:
            legal = obs.legal_action_indices()
            return int(legal[use.integers(len(legal))])
        return self._choose(obs)


# -- approximators ------------------------------------------------------------


class ApproximatorPolicy(Policy):
    """MLP over the feature encoding, with a masked softmax head."""

    kind = "approximator"

    def __init__(self, config: GameConfig, net: MLP, lambda_vocabulary=None):
        super().__init__(config, lambda_vocabulary)
        self.net = net
        self.encoder = FeatureEncoder(config, self.lambda_vocabulary)
        if net.sizes[0] != self.encoder.dim or net.sizes[-1] != config.num_actions:
            raise ValueError("network shape does not match the encoder/action space")

    def action_probabilities(self, view, lambda_condition=None) -> np.ndarray:
        obs = _obs_of(view)
        x = self.encoder.encode(obs, lambda_condition)
        logits = self.net.forward(x[None, :])[0]
        mask = np.zeros(self.config.num_actions, dtype=bool)
        mask[obs.legal_action_indices()] = True
        return masked_softmax(logits[None, :], mask[None, :])[0]

    def probabilities_batch(self, features: np.ndarray, masks: np.ndarray) -> np.ndarray:
        return masked_softmax(self.net.forward(features), masks)

    def greedy_batch(self, features: np.ndarray, masks: np.ndarray) -> np.ndarray:
        logits = np.where(masks, self.net.forward(features), -np.inf)
        return logits.argmax(axis=1)


class QApproximatorPolicy(Policy):
    """Greedy policy over an action-value MLP.

    ``action_probabilities`` exposes a softened view, softmax(values / tau),
    so the policy can serve as a finite-log anchor; greedy play is untouched.
    """

    kind = "q"

    def __init__(self, config: GameConfig, net: MLP, temperature: float = 0.25):
        super().__init__(config)
        self.net = net
        self.temperature = temperature
        self.encoder = FeatureEncoder(config, None)

    def action_values(self, view) -> np.ndarray:
        obs = _obs_of(view)
        x = self.encoder.encode(obs, None)
        return self.net.forward(x[None, :])[0]

    def action_probabilities(self, view, lambda_condition=None) -> np.ndarray:
        obs = _obs_of(view)
        values = self.action_values(obs)
        mask = np.zeros(self.config.num_actions, dtype=bool)
        mask[obs.legal_action_indices()] = True
        return masked_softmax(values[None, :] / self.temperature, mask[None, :])[0]

    def act_greedy(self, view, lambda_condition=None) -> int:
        obs = _obs_of(view)
        values = self.action_values(obs)
        legal = obs.legal_action_indices()
        masked = np.full(len(values), -np.inf)
        masked[legal] = values[legal]
        return int(np.argmax(masked))

    def values_batch(self, features: np.ndarray) -> np.ndarray:
        return self.net.forward(features)


# -- checkpoints --------------------------------------------------------------


class CheckpointError(RuntimeError):
    pass


def save_policy(path, policy: Policy):
    meta = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "encoder_schema": ENCODER_SCHEMA_VERSION,
        "kind": policy.kind,
        "config": policy.config.to_dict(),
        "config_hash": policy.config_hash,
        "lambda_vocabulary": list(policy.lambda_vocabulary) if policy.lambda_vocabulary else None,
    }
    arrays = {}
    if isinstance(policy, ScriptedHumanPolicy):
        meta["scripted"] = {"skill": policy.skill, "noise": policy.noise, "seed": policy.seed}
    elif isinstance(policy, QApproximatorPolicy):
        meta["temperature"] = policy.temperature
        arrays = policy.net.state_arrays()
    elif isinstance(policy, ApproximatorPolicy):
        arrays = policy.net.state_arrays()
    elif not isinstance(policy, UniformRandomPolicy):
        raise CheckpointError(f"cannot checkpoint policy kind {policy.kind!r}")
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_policy(path, config: GameConfig) -> Policy:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        arrays = {k: data[k] for k in data.files if k != "__meta__"}
    if meta["config_hash"] != config.hash():
        raise CheckpointError(
            f"checkpoint was built for a different configuration "
            f"({meta['config_hash'][:12]}… != {config.hash()[:12]}…)"
        )
    if meta["encoder_schema"] != ENCODER_SCHEMA_VERSION:
        raise CheckpointError("checkpoint uses an incompatible encoder schema")
    kind = meta["kind"]
    vocab = tuple(meta["lambda_vocabulary"]) if meta.get("lambda_vocabulary") else None
    if kind == "uniform":
        return UniformRandomPolicy(config)
    if kind == "scripted":
        s = meta["scripted"]
        return ScriptedHumanPolicy(config, skill=s["skill"], noise=s["noise"], seed=s["seed"])
    if kind == "approximator":
        return ApproximatorPolicy(config, MLP.from_arrays(arrays), vocab)
    if kind == "q":
        return QApproximatorPolicy(config, MLP.from_arrays(arrays), meta["temperature"])
    raise CheckpointError(f"unknown checkpoint kind {kind!r}")
