"""Fixed-length feature encoding of one seat's view.

The vector is split into a public block (board state, both players' hint
knowledge, last move), a private block (the partner's visible hand), and an
optional one-hot skill-condition block. Every field gets dedicated
dimensions so changing any single input field changes the vector.
"""

from __future__ import annotations

import numpy as np

from .engine import AOH, GameConfig, Observation

ENCODER_SCHEMA_VERSION = 2


class FeatureEncoder:
    """Encodes observations for one configuration and condition vocabulary.

    The same observation always encodes to the same vector; the condition
    block is all-zero when no condition is supplied.
    """

    def __init__(self, config: GameConfig, lambda_vocabulary: tuple[float, ...] | None = None):
        self.config = config
        self.lambda_vocabulary = tuple(lambda_vocabulary) if lambda_vocabulary else None
        cfg = config
        c, r, h, t = cfg.colors, cfg.num_ranks, cfg.hand_size, cfg.num_card_types
        sizes = {
            "fireworks": c * (r + 1),
            "tokens": cfg.max_hint_tokens + 1,
            "lives": cfg.max_lives + 1,
            "discards": t,
            "knowledge": 2 * h * (c + r + 1),
            "deck": 2,
            "final_round": 2,
            "last_move": 1 + 2 + 4 + h + t + 2 + c + r + h,
            "partner_hand": h * (t + 1),
            "lambda": len(self.lambda_vocabulary) if self.lambda_vocabulary else 0,
        }
        self._offsets = {}
        off = 0
        for name, size in sizes.items():
            self._offsets[name] = off
            off += size
        self.dim = off
        self.public_slice = slice(0, self._offsets["partner_hand"])
        self.private_slice = slice(self._offsets["partner_hand"], self._offsets["lambda"])
        self.lambda_slice = slice(self._offsets["lambda"], self.dim)
        self._card_copies = np.array(cfg.card_counts(), dtype=np.float32)

    def lambda_onehot(self, lambda_condition: float | None) -> np.ndarray:
        n = len(self.lambda_vocabulary) if self.lambda_vocabulary else 0
        block = np.zeros(n, dtype=np.float32)
        if lambda_condition is not None:
            if not self.lambda_vocabulary or lambda_condition not in self.lambda_vocabulary:
                raise ValueError(
                    f"condition {lambda_condition} not in vocabulary {self.lambda_vocabulary}"
                )
            block[self.lambda_vocabulary.index(lambda_condition)] = 1.0
        return block

    def encode(self, view: Observation | AOH, lambda_condition: float | None = None) -> np.ndarray:
        obs = view.observation if isinstance(view, AOH) else view
        cfg = self.config
        c, r, h, t = cfg.colors, cfg.num_ranks, cfg.hand_size, cfg.num_card_types
        x = np.zeros(self.dim, dtype=np.float32)
        o = self._offsets

        base = o["fireworks"]
        for color in range(c):
            x[base + color * (r + 1) + obs.fireworks[color]] = 1.0
        x[o["tokens"] + obs.hint_tokens] = 1.0
        x[o["lives"] + obs.lives] = 1.0
        base = o["discards"]
        for card in range(t):
            n = obs.discard_counts[card]
            if n:
                x[base + card] = n / self._card_copies[card]

        base = o["knowledge"]
        stride = c + r + 1
        for know, count in (
            (obs.own_knowledge, obs.own_hand_size),
            (obs.partner_knowledge, len(obs.partner_hand)),
        ):
            for slot in range(count):
                cm, rm = know[slot]
                off = base + slot * stride
                for color in range(c):
                    if cm >> color & 1:
                        x[off + color] = 1.0
                for rank in range(r):
                    if rm >> rank & 1:
                        x[off + c + rank] = 1.0
                x[off + c + r] = 1.0  # occupied
            base += h * stride

        x[o["deck"]] = obs.deck_size / cfg.deck_size
        x[o["deck"] + 1] = 1.0 if obs.deck_size == 0 else 0.0
        if obs.turns_left >= 0:
            x[o["final_round"]] = 1.0
            x[o["final_round"] + 1] = obs.turns_left / cfg.num_players

        ev = obs.last_event
        base = o["last_move"]
        if ev is None:
            x[base] = 1.0  # game start
        else:
            x[base + 1 + (0 if ev.player == obs.seat else 1)] = 1.0
            kb = base + 3
            a, h2 = ev.action, cfg.hand_size
            if a < h2:
                kind, slot = 0, a
            elif a < 2 * h2:
                kind, slot = 1, a - h2
            elif a < 2 * h2 + c:
                kind, slot = 2, None
            else:
                kind, slot = 3, None
            x[kb + kind] = 1.0
            if slot is not None:
                x[kb + 4 + slot] = 1.0
            if ev.revealed is not None:
                x[kb + 4 + h + ev.revealed] = 1.0
            if ev.success is not None:
                x[kb + 4 + h + t + (0 if ev.success else 1)] = 1.0
            if kind == 2:
                x[kb + 4 + h + t + 2 + (a - 2 * h2)] = 1.0
            elif kind == 3:
                x[kb + 4 + h + t + 2 + c + (a - 2 * h2 - c)] = 1.0
            if ev.hinted_slots:
                for s in ev.hinted_slots:
                    x[kb + 4 + h + t + 2 + c + r + s] = 1.0

        base = o["partner_hand"]
        for slot, card in enumerate(obs.partner_hand):
            x[base + slot * (t + 1) + card] = 1.0
            x[base + slot * (t + 1) + t] = 1.0  # occupied

        if lambda_condition is not None:
            x[self.lambda_slice] = self.lambda_onehot(lambda_condition)
        return x


def encode(aoh: AOH, lambda_condition: float | None = None,
           lambda_vocabulary: tuple[float, ...] | None = None) -> np.ndarray:
    """Convenience one-shot encoding; prefer a shared FeatureEncoder in loops."""
    return FeatureEncoder(aoh.config, lambda_vocabulary).encode(aoh, lambda_condition)
