"""Cross-play evaluation over seeded game batches, with parallel workers."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .driver import run_game
from .engine import GameConfig
from .policies import Policy


@dataclass
class EvalReport:
    n_games: int
    mean: float
    stderr: float
    perfect_fraction: float
    histogram: dict[int, int]
    seeds: list[int] = field(default_factory=list)
    scores: list[int] = field(default_factory=list)

    def summary(self) -> str:
        return (f"{self.mean:.3f} ± {self.stderr:.3f} over {self.n_games} games "
                f"({self.perfect_fraction:.1%} perfect)")


def report_from_scores(scores: list[int], seeds: list[int], max_score: int) -> EvalReport:
    arr = np.asarray(scores, dtype=float)
    stderr = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else 0.0
    hist: dict[int, int] = {}
    for s in scores:
        hist[s] = hist.get(s, 0) + 1
    return EvalReport(
        n_games=len(scores),
        mean=float(arr.mean()),
        stderr=stderr,
        perfect_fraction=float(np.mean(arr == max_score)),
        histogram=dict(sorted(hist.items())),
        seeds=list(seeds),
        scores=list(scores),
    )


class _GreedyActor:
    def __init__(self, policy: Policy, lambda_condition: float | None = None):
        self.policy = policy
        self.lambda_condition = lambda_condition

    def __call__(self, aoh):
        return self.policy.act_greedy(aoh, self.lambda_condition)


_WORKER_STATE: dict = {}


def _eval_worker_init(config, policy_a, policy_b, lam_a, lam_b):
    _WORKER_STATE["args"] = (config, policy_a, policy_b, lam_a, lam_b)


def _eval_one(task):
    seed, a_first = task
    config, policy_a, policy_b, lam_a, lam_b = _WORKER_STATE["args"]
    actor_a = _GreedyActor(policy_a, lam_a)
    actor_b = _GreedyActor(policy_b, lam_b)
    actors = [actor_a, actor_b] if a_first else [actor_b, actor_a]
    rec = run_game(config, actors, seed=seed)
    return rec.final_score


def evaluate(
    policy_a: Policy,
    policy_b: Policy,
    n: int,
    seed_base: int = 0,
    config: GameConfig | None = None,
    lambda_a: float | None = None,
    lambda_b: float | None = None,
    workers: int = 1,
) -> EvalReport:
    """Greedy cross-play on seeds seed_base..seed_base+n-1, alternating seats.

    Deterministic given its inputs: game i uses seed seed_base+i and puts
    policy_a in seat i % 2.
    """
    if n <= 0:
        raise ValueError("n must be >= 1")
    if config is None:
        config = policy_a.config
    for p in (policy_a, policy_b):
        if p.config_hash != config.hash():
            raise ValueError("policy was built for a different configuration")
    seeds = [seed_base + i for i in range(n)]
    tasks = [(seed, i % 2 == 0) for i, seed in enumerate(seeds)]
    if workers <= 1:
        _eval_worker_init(config, policy_a, policy_b, lambda_a, lambda_b)
        scores = [_eval_one(t) for t in tasks]
        _WORKER_STATE.clear()
    else:
        ctx = __import__("multiprocessing").get_context("fork")
        with ctx.Pool(
            workers, initializer=_eval_worker_init,
            initargs=(config, policy_a, policy_b, lambda_a, lambda_b),
        ) as pool:
            scores = pool.map(_eval_one, tasks, chunksize=max(1, n // (workers * 8)))
    return report_from_scores(scores, seeds, config.max_score)


def default_workers() -> int:
    return max(1, (os.cpu_count() or 1) - 0)


# -- think time ----------------------------------------------------------------


def think_time(
    q_values: np.ndarray,
    scale: float = 4.0,
    min_t: float = 0.5,
    max_t: float = 8.0,
    rng: np.random.Generator | None = None,
) -> float:
    """Pause length proportional to the entropy (nats) of softmax(Q).

    With ``rng`` supplied, a uniform ±10% jitter is applied before clamping.
    """
    q = np.asarray(q_values, dtype=float)
    if q.size == 0:
        raise ValueError("need at least one action value")
    z = q - q.max()
    p = np.exp(z)
    p /= p.sum()
    nz = p[p > 0]
    entropy = float(-(nz * np.log(nz)).sum())
    t = scale * entropy
    if rng is not None:
        t *= 1.0 + rng.uniform(-0.1, 0.1)
    return float(min(max(t, min_t), max_t))
