"""Iterated search-augmented imitation with a mixture of skill levels.

Each iteration: retrain the hand belief on the current policy's self-play,
generate games where both seats run anchored greedy search under their own
independently sampled regularization strength, then re-imitate the generated
data with the strength's component mean as a conditioning input. The anchor
never changes: every search decision across every iteration is regularized
toward the original cloned policy.
"""

from __future__ import annotations

import multiprocessing
import time
from dataclasses import dataclass, field

import numpy as np

from .bc import TrainConfig, bc_train
from .belief import BeliefTrainConfig, train_belief
from .driver import run_game
from .engine import GameConfig
from .policies import Policy
from .records import GameRecord
from .search import SearchParams, SearchPolicy


@dataclass
class LambdaDistribution:
    """Uniform mixture of Gaussians truncated to (0, 2*mu).

    Sampling returns both the value and the component mean; the mean is what
    conditioned policies see as their skill label.
    """

    components: tuple[tuple[float, float], ...] = (
        (1.0, 0.25), (2.0, 0.5), (5.0, 1.25), (10.0, 2.5),
    )

    def __post_init__(self):
        if not self.components or any(mu <= 0 or sigma < 0 for mu, sigma in self.components):
            raise ValueError("every component needs mu > 0 and sigma >= 0")

    @property
    def means(self) -> tuple[float, ...]:
        return tuple(mu for mu, _ in self.components)

    def sample(self, rng: np.random.Generator) -> tuple[float, float]:
        mu, sigma = self.components[rng.integers(len(self.components))]
        if sigma == 0.0:
            return mu, mu
        while True:
            value = rng.normal(mu, sigma)
            if 0.0 < value < 2.0 * mu:
                return float(value), mu


def sample_lambda(dist: LambdaDistribution, rng: np.random.Generator) -> tuple[float, float]:
    return dist.sample(rng)


@dataclass
class ILConfig:
    iterations: int = 1
    games_per_iteration: int = 2000
    rollouts_m: int = 200
    collection_mode: str = "both"  # "both" | "single_seat"
    use_color_shuffle: bool = True
    seed: int = 0
    workers: int = 1
    bc_hyper: TrainConfig = field(default_factory=TrainConfig)
    belief_hyper: BeliefTrainConfig = field(default_factory=BeliefTrainConfig)

    def __post_init__(self):
        if self.iterations < 0 or self.games_per_iteration < 1:
            raise ValueError("iterations must be >= 0 and games_per_iteration >= 1")
        if self.collection_mode not in ("both", "single_seat"):
            raise ValueError(f"unknown collection mode {self.collection_mode!r}")


def generate_game(
    pi_roll: Policy,
    pi_anc: Policy,
    belief,
    lambdas: tuple[tuple[float, float], tuple[float, float]],
    config: GameConfig,
    seed: int,
    rollouts_m: int = 200,
    collection_mode: str = "both",
) -> GameRecord:
    """One search-generated game. ``lambdas[p]`` is (value, component mean).

    In single-seat mode only seat 0 searches (seat 1 plays the rollout policy
    directly) and only seat 0's moves carry labels, so imitation later uses
    only the searching seat's perspective.
    """
    conditioned = pi_roll.lambda_vocabulary is not None
    actors = []
    labels = [None, None]
    for seat in range(2):
        lam, mu = lambdas[seat]
        if collection_mode == "single_seat" and seat == 1:
            actors.append(lambda aoh, _p=pi_roll: _p.act_greedy(
                aoh, mu if conditioned else None))
            continue
        params = SearchParams(
            lambda_reg=lam,
            rollouts_m=rollouts_m,
            anchor_policy=pi_anc,
            rollout_policy=pi_roll,
            partner_model=pi_roll,
            mode="greedy",
            rollout_lambda=mu if conditioned else None,
            partner_lambda=mu if conditioned else None,
        )
        actors.append(SearchPolicy(config, belief, params, seed=seed * 2 + seat))
        labels[seat] = mu
    searchers = [a if callable(a) else (lambda aoh, _p=a: _p.act_greedy(aoh)) for a in actors]
    return run_game(config, searchers, seed=seed, labels=tuple(labels))


_IL_WORKER: dict = {}


def _il_worker_init(pi_roll, pi_anc, belief, config, rollouts_m, mode):
    _IL_WORKER.update(pi_roll=pi_roll, pi_anc=pi_anc, belief=belief, config=config,
                      rollouts_m=rollouts_m, mode=mode)

def _il_one_game(task):
    seed, lambdas = task
    w = _IL_WORKER
    return generate_game(w["pi_roll"], w["pi_anc"], w["belief"], lambdas,
                         w["config"], seed, w["rollouts_m"], w["mode"])


def generate_dataset(pi_roll, pi_anc, belief, dist: LambdaDistribution,
                     config: GameConfig, n_games: int, seed: int,
                     rollouts_m: int, collection_mode: str = "both",
                     workers: int = 1, progress=None) -> list[GameRecord]:
    """Search-generate games until the dataset holds ``n_games`` records."""
    rng = np.random.Generator(np.random.PCG64(seed))
    tasks = []
    for i in range(n_games):
        lambdas = (dist.sample(rng), dist.sample(rng))
        tasks.append((seed * 1_000_003 + i, lambdas))
    records: list[GameRecord] = []
    t0 = time.perf_counter()
    if workers <= 1:
        _il_worker_init(pi_roll, pi_anc, belief, config, rollouts_m, collection_mode)
        for i, task in enumerate(tasks):
            records.append(_il_one_game(task))
            if progress is not None and (i + 1) % 50 == 0:
                progress(_progress_entry(records, t0))
        _IL_WORKER.clear()
    else:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(workers, initializer=_il_worker_init,
                      initargs=(pi_roll, pi_anc, belief, config, rollouts_m,
                                collection_mode)) as pool:
            for rec in pool.imap(_il_one_game, tasks, chunksize=4):
                records.append(rec)
                if progress is not None and len(records) % 50 == 0:
                    progress(_progress_entry(records, t0))
    return records


def _progress_entry(records, t0):
    dt = max(time.perf_counter() - t0, 1e-9)
    scores = [r.final_score for r in records]
    return {
        "stage": "generate",
        "games": len(records),
        "games_per_sec": round(len(records) / dt, 3),
        "mean_score": round(float(np.mean(scores)), 3),
    }


@dataclass
class ILResult:
    conditioned: Policy  # skill-conditioned imitation policy
    unconditioned: Policy  # same data, no skill input (the partner model)
    belief: object  # last belief model used for generation
    datasets: list[list[GameRecord]]


def run_pikl_il(pi_bc: Policy, dist: LambdaDistribution, il: ILConfig,
                config: GameConfig | None = None, progress=None) -> ILResult:
    """The full iterated loop. Returns both the conditioned policy and its
    unconditioned sibling trained on the same final dataset.

    With ``iterations == 0`` the input policy is returned untouched.
    """
    config = config or pi_bc.config
    if il.iterations == 0:
        return ILResult(conditioned=pi_bc, unconditioned=pi_bc, belief=None, datasets=[])

    anchor = pi_bc  # never replaced: every search call anchors to the original
    rollout: Policy = pi_bc
    conditioned: Policy = pi_bc
    datasets = []
    belief = None
    for iteration in range(il.iterations):
        if progress is not None:
            progress({"stage": "belief", "iteration": iteration})
        belief = train_belief(rollout, rollout, config, il.belief_hyper)
        if progress is not None:
            progress({"stage": "belief_done", "iteration": iteration,
                      "val_log_likelihood": belief.train_history["best"]})
        records = generate_dataset(
            rollout, anchor, belief, dist, config,
            n_games=il.games_per_iteration,
            seed=il.seed + 7919 * iteration,
            rollouts_m=il.rollouts_m,
            collection_mode=il.collection_mode,
            workers=il.workers,
            progress=progress,
        )
        assert len(records) >= il.games_per_iteration
        datasets.append(records)
        hyper = il.bc_hyper
        conditioned = bc_train(
            records, use_color_shuffle=il.use_color_shuffle,
            condition_on_lambda=True,
            hyper=TrainConfig(**{**hyper.__dict__, "lambda_vocabulary": dist.means}),
        )
        rollout = bc_train(
            records, use_color_shuffle=il.use_color_shuffle,
            condition_on_lambda=False, hyper=hyper,
        )
        if progress is not None:
            progress({
                "stage": "imitate_done", "iteration": iteration,
                "conditioned_val_accuracy": conditioned.train_history["best_val_accuracy"],
                "unconditioned_val_accuracy": rollout.train_history["best_val_accuracy"],
            })
        assert anchor is pi_bc  # the anchor is pinned across iterations
    return ILResult(conditioned=conditioned, unconditioned=rollout,
                    belief=belief, datasets=datasets)
