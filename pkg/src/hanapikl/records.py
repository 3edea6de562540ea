"""Game records and their JSON-lines serialization.

One game per line. The deck is stored as the explicit draw order so a record
replays bit-identically even if the shuffle PRNG changes. Actions use the
engine's canonical integer index ordering.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator

from .engine import (
    Action,
    GameConfig,
    GameState,
    canonical_json,
    check_permutation,
    new_game_from_deck,
    permute_action_index,
    permute_card,
)

SCHEMA_VERSION = 1


class DatasetFormatError(ValueError):
    """Raised on schema mismatches or corrupt lines (carries the line number)."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


@dataclass
class MoveRecord:
    player: int
    action: int
    lambda_label: float | None = None  # component mean of the acting player's skill draw


@dataclass
class GameRecord:
    config: GameConfig
    seed: int | None
    deck: list[int]  # explicit draw order
    moves: list[MoveRecord] = field(default_factory=list)
    rewards: list[int] = field(default_factory=list)
    final_score: int = 0
    termination: str = "Ongoing"

    def to_dict(self) -> dict:
        actions = []
        for mv in self.moves:
            entry = {"player": mv.player, "action": mv.action}
            if mv.lambda_label is not None:
                entry["lambda_label"] = mv.lambda_label
            actions.append(entry)
        return {
            "v": SCHEMA_VERSION,
            "config": self.config.to_dict(),
            "seed": self.seed,
            "deck": list(self.deck),
            "actions": actions,
            "rewards": list(self.rewards),
            "final_score": self.final_score,
            "termination": self.termination,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GameRecord":
        moves = [
            MoveRecord(a["player"], a["action"], a.get("lambda_label"))
            for a in d["actions"]
        ]
        return cls(
            config=GameConfig.from_dict(d["config"]),
            seed=d.get("seed"),
            deck=list(d["deck"]),
            moves=moves,
            rewards=list(d["rewards"]),
            final_score=d["final_score"],
            termination=d["termination"],
        )

    def to_line(self) -> str:
        return canonical_json(self.to_dict())

    def replay(self, on_step=None) -> GameState:
        """Re-run the recorded moves; returns the final state.

        ``on_step(state, move)`` is invoked before each move is applied.
        """
        state = new_game_from_deck(self.config, self.deck)
        for mv in self.moves:
            if on_step is not None:
                on_step(state, mv)
            if state.active_player != mv.player:
                raise DatasetFormatError(f"move by player {mv.player} out of turn")
            state.step(mv.action)
        return state

    def has_labels(self) -> bool:
        return any(mv.lambda_label is not None for mv in self.moves)


def apply_color_permutation(record: GameRecord, perm: list[int] | tuple[int, ...]) -> GameRecord:
    """Relabel colors consistently across the deck and every action."""
    cfg = record.config
    check_permutation(cfg, perm)
    return GameRecord(
        config=cfg,
        seed=record.seed,
        deck=[permute_card(cfg, perm, c) for c in record.deck],
        moves=[
            MoveRecord(mv.player, permute_action_index(cfg, perm, mv.action), mv.lambda_label)
            for mv in record.moves
        ],
        rewards=list(record.rewards),
        final_score=record.final_score,
        termination=record.termination,
    )


def write_records(path, records) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(rec.to_line())
            f.write("\n")
            n += 1
    return n


def read_records(path) -> Iterator[GameRecord]:
    """Stream records one line at a time (constant memory in games held)."""
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetFormatError(f"corrupt record: {e.msg}", line=lineno) from e
            if d.get("v") != SCHEMA_VERSION:
                raise DatasetFormatError(
                    f"schema version {d.get('v')!r} != {SCHEMA_VERSION}", line=lineno
                )
            try:
                yield GameRecord.from_dict(d)
            except (KeyError, TypeError, ValueError) as e:
                raise DatasetFormatError(f"malformed record: {e}", line=lineno) from e


def load_records(path) -> list[GameRecord]:
    return list(read_records(path))


def action_of(record: GameRecord, move_index: int) -> Action:
    return Action.from_index(record.config, record.moves[move_index].action)
