"""Deterministic 2-player Hanabi engine with configurable deck composition.

Cards are packed into ints (``card = color * num_ranks + rank``) and the
mutable ``GameState`` exposes an in-place ``step`` for hot loops plus a pure
``apply_action`` wrapper.  Deck shuffling uses numpy's PCG64 generator
(shuffle algorithm: Fisher-Yates as implemented by ``Generator.shuffle``,
version pinned by the numpy dependency); game records store the explicit
draw order so they stay replayable regardless of the PRNG.

Canonical action index ordering (``H`` = hand size, ``C`` = colors,
``R`` = ranks, two players, hints always target the partner):

    [0, H)            Play(slot)
    [H, 2H)           Discard(slot)
    [2H, 2H + C)      HintColor(color)
    [2H + C, 2H+C+R)  HintRank(rank)
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

# Termination codes.
ONGOING = 0
PERFECT_SCORE = 1
LIVES_EXHAUSTED = 2
DECK_EXHAUSTED = 3
STATUS_NAMES = ("Ongoing", "PerfectScore", "LivesExhausted", "DeckExhaustedFinalTurnsDone")


class ConfigError(ValueError):
    """Raised for invalid game configurations."""


class IllegalActionError(ValueError):
    """Raised when an action is rejected; the state is left unchanged."""


class UsageError(RuntimeError):
    """Raised for out-of-contract calls (e.g. acting on a terminal state)."""


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class GameConfig:
    """Rules parameterization. ``rank_multiset[r]`` is the copy count of rank r."""

    num_players: int = 2
    colors: int = 5
    rank_multiset: tuple[int, ...] = (3, 2, 2, 2, 1)
    hand_size: int = 5
    max_hint_tokens: int = 8
    max_lives: int = 3
    discard_at_full_tokens: bool = False  # Hanab.Live rule: illegal by default

    def __post_init__(self):
        if self.num_players != 2:
            raise ConfigError("only 2-player games are supported")
        if not 1 <= self.colors <= 5:
            raise ConfigError(f"colors must be in [1, 5], got {self.colors}")
        if self.hand_size < 1:
            raise ConfigError("hand_size must be >= 1")
        if len(self.rank_multiset) < 1 or any(c < 1 for c in self.rank_multiset):
            raise ConfigError("every rank count must be >= 1")
        if self.max_hint_tokens < 1 or self.max_lives < 1:
            raise ConfigError("max_hint_tokens and max_lives must be >= 1")
        if self.deck_size < self.num_players * self.hand_size:
            raise ConfigError(
                f"deck of {self.deck_size} cannot deal {self.num_players} hands of {self.hand_size}"
            )
        object.__setattr__(self, "rank_multiset", tuple(self.rank_multiset))

    @property
    def num_ranks(self) -> int:
        return len(self.rank_multiset)

    @property
    def num_card_types(self) -> int:
        return self.colors * self.num_ranks

    @property
    def deck_size(self) -> int:
        return self.colors * sum(self.rank_multiset)

    @property
    def max_score(self) -> int:
        return self.colors * self.num_ranks

    @property
    def num_actions(self) -> int:
        return 2 * self.hand_size + self.colors + self.num_ranks

    def card(self, color: int, rank: int) -> int:
        return color * self.num_ranks + rank

    def split_card(self, card: int) -> tuple[int, int]:
        return divmod(card, self.num_ranks)

    def card_counts(self) -> list[int]:
        """Copy count per card type in the full deck."""
        return [self.rank_multiset[r] for _ in range(self.colors) for r in range(self.num_ranks)]

    def full_deck(self) -> list[int]:
        deck = []
        for color in range(self.colors):
            for rank in range(self.num_ranks):
                deck.extend([self.card(color, rank)] * self.rank_multiset[rank])
        return deck

    def to_dict(self) -> dict:
        return {
            "num_players": self.num_players,
            "colors": self.colors,
            "rank_multiset": list(self.rank_multiset),
            "hand_size": self.hand_size,
            "max_hint_tokens": self.max_hint_tokens,
            "max_lives": self.max_lives,
            "discard_at_full_tokens": self.discard_at_full_tokens,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GameConfig":
        return cls(
            num_players=d.get("num_players", 2),
            colors=d["colors"],
            rank_multiset=tuple(d["rank_multiset"]),
            hand_size=d["hand_size"],
            max_hint_tokens=d.get("max_hint_tokens", 8),
            max_lives=d.get("max_lives", 3),
            discard_at_full_tokens=d.get("discard_at_full_tokens", False),
        )

    def hash(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()


MINI_CONFIG = GameConfig(colors=2, hand_size=3)


@dataclass(frozen=True)
class Action:
    """One of Play(slot) / Discard(slot) / HintColor(color) / HintRank(rank)."""

    kind: str  # "play" | "discard" | "hint_color" | "hint_rank"
    value: int
    target: int | None = None  # hint recipient; always the partner in 2p

    def to_index(self, config: GameConfig) -> int:
        h = config.hand_size
        if self.kind == "play":
            return self.value
        if self.kind == "discard":
            return h + self.value
        if self.kind == "hint_color":
            return 2 * h + self.value
        if self.kind == "hint_rank":
            return 2 * h + config.colors + self.value
        raise ValueError(f"unknown action kind {self.kind!r}")

    @classmethod
    def from_index(cls, config: GameConfig, index: int) -> "Action":
        h, c, r = config.hand_size, config.colors, config.num_ranks
        if not 0 <= index < config.num_actions:
            raise ValueError(f"action index {index} out of range")
        if index < h:
            return cls("play", index)
        if index < 2 * h:
            return cls("discard", index - h)
        if index < 2 * h + c:
            return cls("hint_color", index - 2 * h, target=None)
        return cls("hint_rank", index - 2 * h - c, target=None)


@dataclass(frozen=True)
class TerminationStatus:
    kind: str
    final_score: int

    @property
    def is_terminal(self) -> bool:
        return self.kind != "Ongoing"


def _termination(status: int, score: int) -> TerminationStatus:
    final = 0 if status == LIVES_EXHAUSTED else score
    return TerminationStatus(STATUS_NAMES[status], final if status != ONGOING else score)


@dataclass(frozen=True)
class StepOutcome:
    """Public record of one applied action (identical for both observers)."""

    player: int
    action: int  # canonical index
    reward: int
    status: int
    revealed: int | None = None  # card that left the actor's hand
    success: bool | None = None  # play succeeded / failed; None for non-plays
    drawn: int | None = None  # card drawn by the actor (hidden from the actor)
    hinted_slots: tuple[int, ...] | None = None


class GameState:
    """Full hidden game state. ``deck[-1]`` is the next card to draw."""

    __slots__ = (
        "config", "deck", "hands", "knowledge", "fireworks", "hint_tokens",
        "lives", "discard_counts", "active_player", "turns_left", "score",
        "status", "turn_count", "last_outcome",
    )

    def __init__(self, config: GameConfig, draw_order: list[int]):
        counts = config.card_counts()
        for card in draw_order:
            counts[card] -= 1
        if len(draw_order) != config.deck_size or any(c != 0 for c in counts):
            raise ConfigError("draw order is not a permutation of the configured deck")
        self.config = config
        self.deck = list(reversed(draw_order))
        self.hands: list[list[int]] = [[] for _ in range(config.num_players)]
        full = ((1 << config.colors) - 1, (1 << config.num_ranks) - 1)
        self.knowledge: list[list[tuple[int, int]]] = [[] for _ in range(config.num_players)]
        for p in range(config.num_players):
            for _ in range(config.hand_size):
                self.hands[p].append(self.deck.pop())
                self.knowledge[p].append(full)
        self.fireworks = [0] * config.colors
        self.hint_tokens = config.max_hint_tokens
        self.lives = config.max_lives
        self.discard_counts = [0] * config.num_card_types
        self.active_player = 0
        self.turns_left = config.num_players if not self.deck else -1
        self.score = 0
        self.status = ONGOING
        self.turn_count = 0
        self.last_outcome: StepOutcome | None = None

    def copy(self) -> "GameState":
        st = GameState.__new__(GameState)
        st.config = self.config
        st.deck = list(self.deck)
        st.hands = [list(h) for h in self.hands]
        st.knowledge = [list(k) for k in self.knowledge]
        st.fireworks = list(self.fireworks)
        st.hint_tokens = self.hint_tokens
        st.lives = self.lives
        st.discard_counts = list(self.discard_counts)
        st.active_player = self.active_player
        st.turns_left = self.turns_left
        st.score = self.score
        st.status = self.status
        st.turn_count = self.turn_count
        st.last_outcome = self.last_outcome
        return st

    @property
    def is_terminal(self) -> bool:
        return self.status != ONGOING

    def termination(self) -> TerminationStatus:
        return _termination(self.status, self.score)

    # -- legality ----------------------------------------------------------

    def legal_action_indices(self, player: int | None = None) -> list[int]:
        if self.status != ONGOING:
            raise UsageError("cannot act on a terminal state")
        if player is not None and player != self.active_player:
            raise UsageError(f"player {player} acting out of turn")
        cfg = self.config
        me = self.active_player
        partner = 1 - me
        h = cfg.hand_size
        legal = list(range(len(self.hands[me])))  # plays
        if self.hint_tokens < cfg.max_hint_tokens or cfg.discard_at_full_tokens:
            legal.extend(h + slot for slot in range(len(self.hands[me])))
        if self.hint_tokens > 0:
            colors_present = 0
            ranks_present = 0
            for card in self.hands[partner]:
                c, r = divmod(card, cfg.num_ranks)
                colors_present |= 1 << c
                ranks_present |= 1 << r
            legal.extend(2 * h + c for c in range(cfg.colors) if colors_present >> c & 1)
            legal.extend(2 * h + cfg.colors + r for r in range(cfg.num_ranks) if ranks_present >> r & 1)
        return legal

    def legal_mask(self) -> np.ndarray:
        mask = np.zeros(self.config.num_actions, dtype=bool)
        mask[self.legal_action_indices()] = True
        return mask

    # -- transition --------------------------------------------------------

    def step(self, action: int) -> StepOutcome:
        """Apply an action index in place and return the public outcome."""
        cfg = self.config
        if self.status != ONGOING:
            raise UsageError("cannot act on a terminal state")
        me = self.active_player
        partner = 1 - me
        h = cfg.hand_size
        nr = cfg.num_ranks
        reward = 0
        revealed = success = drawn = hinted = None

        if action < h:  # play
            slot = action
            if slot >= len(self.hands[me]):
                raise IllegalActionError(f"play slot {slot} is empty")
            card = self.hands[me].pop(slot)
            self.knowledge[me].pop(slot)
            revealed = card
            color, rank = divmod(card, nr)
            if self.fireworks[color] == rank:
                self.fireworks[color] += 1
                self.score += 1
                reward = 1
                success = True
                if rank == nr - 1 and self.hint_tokens < cfg.max_hint_tokens:
                    self.hint_tokens += 1
                if self.score == cfg.max_score:
                    self.status = PERFECT_SCORE
            else:
                self.discard_counts[card] += 1
                self.lives -= 1
                success = False
                if self.lives == 0:
                    self.status = LIVES_EXHAUSTED
                    reward = -self.score  # cumulative reward == final score == 0
            if self.deck and self.status == ONGOING:
                drawn = self.deck.pop()
                self.hands[me].append(drawn)
                self.knowledge[me].append(((1 << cfg.colors) - 1, (1 << nr) - 1))
        elif action < 2 * h:  # discard
            slot = action - h
            if slot >= len(self.hands[me]):
                raise IllegalActionError(f"discard slot {slot} is empty")
            if self.hint_tokens >= cfg.max_hint_tokens and not cfg.discard_at_full_tokens:
                raise IllegalActionError("discard is illegal at full hint tokens")
            card = self.hands[me].pop(slot)
            self.knowledge[me].pop(slot)
            revealed = card
            self.discard_counts[card] += 1
            if self.hint_tokens < cfg.max_hint_tokens:
                self.hint_tokens += 1
            if self.deck:
                drawn = self.deck.pop()
                self.hands[me].append(drawn)
                self.knowledge[me].append(((1 << cfg.colors) - 1, (1 << nr) - 1))
        else:  # hint
            if self.hint_tokens <= 0:
                raise IllegalActionError("no hint tokens available")
            is_color = action < 2 * h + cfg.colors
            value = action - 2 * h if is_color else action - 2 * h - cfg.colors
            matches = [
                i for i, card in enumerate(self.hands[partner])
                if (card // nr if is_color else card % nr) == value
            ]
            if not matches:
                raise IllegalActionError("empty hints are illegal")
            know = self.knowledge[partner]
            for i in range(len(know)):
                cm, rm = know[i]
                if is_color:
                    know[i] = (1 << value, rm) if i in matches else (cm & ~(1 << value), rm)
                else:
                    know[i] = (cm, 1 << value) if i in matches else (cm, rm & ~(1 << value))
            self.hint_tokens -= 1
            hinted = tuple(matches)

        # Final-round bookkeeping: moves made after the deck emptied count
        # down; the emptying move itself does not.
        if self.turns_left > 0:
            self.turns_left -= 1
            if self.turns_left == 0 and self.status == ONGOING:
                self.status = DECK_EXHAUSTED
        if self.turns_left < 0 and not self.deck:
            self.turns_left = cfg.num_players

        self.active_player = partner
        self.turn_count += 1
        outcome = StepOutcome(
            player=me, action=action, reward=reward, status=self.status,
            revealed=revealed, success=success, drawn=drawn, hinted_slots=hinted,
        )
        self.last_outcome = outcome
        return outcome

    def multiset_check(self) -> bool:
        """Card conservation: deck + hands + discard + fireworks == full deck."""
        counts = self.config.card_counts()
        for card in self.deck:
            counts[card] -= 1
        for hand in self.hands:
            for card in hand:
                counts[card] -= 1
        for card, n in enumerate(self.discard_counts):
            counts[card] -= n
        nr = self.config.num_ranks
        for color, height in enumerate(self.fireworks):
            for rank in range(height):
                counts[color * nr + rank] -= 1
        return all(c == 0 for c in counts)

    def turn_cap(self) -> int:
        """Hard upper bound on total moves for this config."""
        cfg = self.config
        # plays/discards consume at most the whole deck; hints are bounded by
        # the initial budget plus every possible regain (discards + finished
        # suits); plus the final round.
        return cfg.deck_size + cfg.max_hint_tokens + cfg.deck_size + cfg.colors + cfg.num_players + 2


def new_game(config: GameConfig, seed: int) -> GameState:
    """Deal a fresh game with a PCG64-shuffled deck."""
    rng = np.random.Generator(np.random.PCG64(seed))
    deck = np.array(config.full_deck(), dtype=np.int64)
    rng.shuffle(deck)
    return GameState(config, deck.tolist())


def new_game_from_deck(config: GameConfig, draw_order: list[int]) -> GameState:
    return GameState(config, list(draw_order))


def legal_actions(state: GameState, player: int) -> list[Action]:
    return [Action.from_index(state.config, i) for i in state.legal_action_indices(player)]


def apply_action(state: GameState, action: Action | int) -> tuple[GameState, int, TerminationStatus]:
    """Pure transition: returns a new state, leaving ``state`` untouched."""
    index = action if isinstance(action, int) else action.to_index(state.config)
    if index not in state.legal_action_indices():
        raise IllegalActionError(f"action {index} is not legal in this state")
    nxt = state.copy()
    outcome = nxt.step(index)
    return nxt, outcome.reward, nxt.termination()


# -- observations and histories ---------------------------------------------


@dataclass(frozen=True)
class Observation:
    """One player's view: all public state plus the partner's hand."""

    config: GameConfig
    seat: int
    fireworks: tuple[int, ...]
    hint_tokens: int
    lives: int
    discard_counts: tuple[int, ...]
    partner_hand: tuple[int, ...]
    own_hand_size: int
    own_knowledge: tuple[tuple[int, int], ...]
    partner_knowledge: tuple[tuple[int, int], ...]
    deck_size: int
    turns_left: int
    active_player: int
    score: int
    turn_count: int
    last_event: StepOutcome | None  # censored: own draws hidden

    @property
    def is_my_turn(self) -> bool:
        return self.active_player == self.seat

    def legal_action_indices(self) -> list[int]:
        """Legality is a function of the observation alone."""
        if not self.is_my_turn:
            raise UsageError("legal actions are defined for the acting seat")
        cfg = self.config
        h = cfg.hand_size
        legal = list(range(self.own_hand_size))
        if self.hint_tokens < cfg.max_hint_tokens or cfg.discard_at_full_tokens:
            legal.extend(h + slot for slot in range(self.own_hand_size))
        if self.hint_tokens > 0:
            colors_present = 0
            ranks_present = 0
            for card in self.partner_hand:
                c, r = divmod(card, cfg.num_ranks)
                colors_present |= 1 << c
                ranks_present |= 1 << r
            legal.extend(2 * h + c for c in range(cfg.colors) if colors_present >> c & 1)
            legal.extend(2 * h + cfg.colors + r for r in range(cfg.num_ranks) if ranks_present >> r & 1)
        return legal

    def unseen_counts(self) -> list[int]:
        """Copy counts of card types not visible from this seat (own hand + deck)."""
        counts = self.config.card_counts()
        for card in self.partner_hand:
            counts[card] -= 1
        for card, n in enumerate(self.discard_counts):
            counts[card] -= n
        nr = self.config.num_ranks
        for color, height in enumerate(self.fireworks):
            for rank in range(height):
                counts[color * nr + rank] -= 1
        return counts


def censor_event(event: StepOutcome | None, seat: int) -> StepOutcome | None:
    """Hide the actor's own drawn card from the actor's view."""
    if event is None or event.player != seat or event.drawn is None:
        return event
    return StepOutcome(
        player=event.player, action=event.action, reward=event.reward,
        status=event.status, revealed=event.revealed, success=event.success,
        drawn=None, hinted_slots=event.hinted_slots,
    )


def observe(state: GameState, seat: int) -> Observation:
    if not 0 <= seat < state.config.num_players:
        raise UsageError(f"invalid seat {seat}")
    partner = 1 - seat
    return Observation(
        config=state.config,
        seat=seat,
        fireworks=tuple(state.fireworks),
        hint_tokens=state.hint_tokens,
        lives=state.lives,
        discard_counts=tuple(state.discard_counts),
        partner_hand=tuple(state.hands[partner]),
        own_hand_size=len(state.hands[seat]),
        own_knowledge=tuple(state.knowledge[seat]),
        partner_knowledge=tuple(state.knowledge[partner]),
        deck_size=len(state.deck),
        turns_left=state.turns_left,
        active_player=state.active_player,
        score=state.score,
        turn_count=state.turn_count,
        last_event=censor_event(state.last_outcome, seat),
    )


@dataclass
class AOH:
    """Action-observation history for one seat.

    ``events`` holds every applied move (censored so the owner's own draws
    stay hidden); ``initial_partner_hand`` pins the visible part of the deal.
    Together with the current observation this is everything the seat has
    ever seen.
    """

    config: GameConfig
    seat: int
    initial_partner_hand: tuple[int, ...]
    events: list[StepOutcome] = field(default_factory=list)
    observation: Observation | None = None

    def record(self, event: StepOutcome, state: GameState):
        self.events.append(censor_event(event, self.seat))
        self.observation = observe(state, self.seat)


def start_histories(state: GameState) -> list[AOH]:
    return [
        AOH(
            config=state.config,
            seat=seat,
            initial_partner_hand=tuple(state.hands[1 - seat]),
            observation=observe(state, seat),
        )
        for seat in range(state.config.num_players)
    ]


# -- color relabeling --------------------------------------------------------


def check_permutation(config: GameConfig, perm: list[int] | tuple[int, ...]):
    if sorted(perm) != list(range(config.colors)):
        raise ValueError(f"{perm} is not a bijection on [0, {config.colors})")


def permute_card(config: GameConfig, perm, card: int) -> int:
    color, rank = divmod(card, config.num_ranks)
    return perm[color] * config.num_ranks + rank


def permute_action_index(config: GameConfig, perm, action: int) -> int:
    lo = 2 * config.hand_size
    if lo <= action < lo + config.colors:
        return lo + perm[action - lo]
    return action


def permute_state(state: GameState, perm) -> GameState:
    """Relabel colors everywhere in a state (test helper for equivariance)."""
    check_permutation(state.config, perm)
    cfg = state.config
    st = state.copy()
    st.deck = [permute_card(cfg, perm, c) for c in st.deck]
    st.hands = [[permute_card(cfg, perm, c) for c in h] for h in st.hands]
    fireworks = [0] * cfg.colors
    for color, height in enumerate(state.fireworks):
        fireworks[perm[color]] = height
    st.fireworks = fireworks
    discard = [0] * cfg.num_card_types
    for card, n in enumerate(state.discard_counts):
        discard[permute_card(cfg, perm, card)] = n
    st.discard_counts = discard

    def permute_masks(know):
        out = []
        for cm, rm in know:
            pcm = 0
            for c in range(cfg.colors):
                if cm >> c & 1:
                    pcm |= 1 << perm[c]
            out.append((pcm, rm))
        return out

    st.knowledge = [permute_masks(k) for k in state.knowledge]
    if st.last_outcome is not None:
        ev = st.last_outcome
        st.last_outcome = StepOutcome(
            player=ev.player,
            action=permute_action_index(cfg, perm, ev.action),
            reward=ev.reward, status=ev.status,
            revealed=None if ev.revealed is None else permute_card(cfg, perm, ev.revealed),
            success=ev.success,
            drawn=None if ev.drawn is None else permute_card(cfg, perm, ev.drawn),
            hinted_slots=ev.hinted_slots,
        )
    return st
