"""Plays full games between two actors, producing replayable records.

An actor is any callable ``actor(aoh) -> action index``. The driver keeps a
per-seat action-observation history up to date and never shows an actor its
own cards.
"""

from __future__ import annotations

from .engine import GameConfig, GameState, new_game, new_game_from_deck, start_histories
from .records import GameRecord, MoveRecord


def histories_from_record(record: GameRecord, upto_move: int | None = None):
    """Replay a record prefix; returns (state, per-seat histories)."""
    state = new_game_from_deck(record.config, record.deck)
    histories = start_histories(state)
    moves = record.moves if upto_move is None else record.moves[:upto_move]
    for mv in moves:
        outcome = state.step(mv.action)
        for aoh in histories:
            aoh.record(outcome, state)
    return state, histories


def run_game(
    config: GameConfig,
    actors,
    seed: int | None = None,
    deck: list[int] | None = None,
    labels: tuple[float | None, float | None] = (None, None),
    on_decision=None,
    max_moves: int | None = None,
) -> GameRecord:
    """Play one game to termination.

    ``labels[p]`` is attached to every move of player p. ``on_decision`` is
    called as ``on_decision(seat, aoh, action)`` after each actor commits to
    an action but before it is applied.
    """
    if deck is None:
        if seed is None:
            raise ValueError("either seed or deck must be given")
        state = new_game(config, seed)
        # Reconstruct the draw order: dealt hands first, then the live deck.
        record_deck = [c for hand in state.hands for c in hand] + list(reversed(state.deck))
    else:
        state = new_game_from_deck(config, deck)
        record_deck = list(deck)
    histories = start_histories(state)
    record = GameRecord(config=config, seed=seed, deck=record_deck)
    cap = state.turn_cap()
    while not state.is_terminal:
        if max_moves is not None and len(record.moves) >= max_moves:
            break  # caller asked for a prefix
        seat = state.active_player
        action = actors[seat](histories[seat])
        if on_decision is not None:
            on_decision(seat, histories[seat], action)
        outcome = state.step(action)
        for aoh in histories:
            aoh.record(outcome, state)
        record.moves.append(MoveRecord(seat, action, labels[seat]))
        record.rewards.append(outcome.reward)
        if len(record.moves) > cap:
            raise RuntimeError(f"game exceeded the {cap}-move cap; engine invariant broken")
    term = state.termination()
    record.final_score = term.final_score
    record.termination = term.kind
    return record
