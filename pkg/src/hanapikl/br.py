"""Anchored best-response Q-learning against a frozen partner.

Cross-play episodes are collected from the learner's seat; the Q-learning
target picks its bootstrap action by argmax of Q + lambda * log(anchor), and
exploration is epsilon-greedy over the same regularized score. With the
regularization weight at zero (or the explicit vanilla rule) this is plain
Q-learning; the unregularized baseline is a configuration of this module,
not separate code.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .engine import GameConfig, new_game, observe, start_histories
from .features import FeatureEncoder
from .nets import MLP, Adam, clip_grads
from .policies import Policy, QApproximatorPolicy


class TrainingDiverged(RuntimeError):
    pass


ANCHOR_FLOOR = 1e-8  # keeps log(anchor) finite for actions the anchor never takes


@dataclass
class BRConfig:
    lambda_reg: float = 0.1
    gamma: float = 0.999
    epsilon_max: float = 0.1  # per-episode epsilon ~ Uniform[0, epsilon_max]
    partner_lambda_vocabulary: tuple[float, ...] | None = (1.0, 2.0, 5.0, 10.0)
    target_rule: str = "regularized"  # "regularized" | "vanilla"
    training_steps: int = 30_000
    batch_size: int = 64
    learning_rate: float = 1e-3
    hidden: tuple[int, ...] = (192, 128)
    replay_capacity: int = 3000  # episodes
    priority_exponent: float = 0.0  # 0 = uniform episode sampling
    min_replay: int = 50
    generate_every: int = 4  # fresh episode per N optimizer steps
    target_sync_every: int = 500
    grad_clip: float = 10.0
    q_temperature: float = 0.25
    divergence_td_cap: float = 25.0
    divergence_window: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.lambda_reg < 0:
            raise ValueError("lambda_reg must be >= 0")
        if not 0.0 <= self.epsilon_max <= 1.0:
            raise ValueError("epsilon_max must be in [0, 1]")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if self.target_rule not in ("regularized", "vanilla"):
            raise ValueError(f"unknown target rule {self.target_rule!r}")


def regularized_scores(q_values: np.ndarray, bc_probs: np.ndarray,
                       lambda_reg: float, legal_mask: np.ndarray) -> np.ndarray:
    """Q + lambda * log(anchor) over legal actions, -inf elsewhere."""
    if not legal_mask.any():
        raise ValueError("no legal actions")
    floored = np.clip(bc_probs, ANCHOR_FLOOR, None)
    scores = q_values + lambda_reg * np.log(floored)
    return np.where(legal_mask, scores, -np.inf)


def regularized_target(q_next: np.ndarray, bc_probs: np.ndarray, reward: float,
                       config: BRConfig, legal_mask: np.ndarray | None = None,
                       terminal: bool = False) -> float:
    """One-step TD target with anchor-regularized bootstrap action selection."""
    if terminal:
        return float(reward)
    if legal_mask is None:
        legal_mask = np.ones(len(q_next), dtype=bool)
    scores = regularized_scores(q_next, bc_probs, config.lambda_reg, legal_mask)
    best = int(np.argmax(scores))
    return float(reward + config.gamma * q_next[best])


def vanilla_target(q_next: np.ndarray, reward: float, config: BRConfig,
                   legal_mask: np.ndarray | None = None,
                   terminal: bool = False) -> float:
    """Plain Q-learning target (the unregularized reference rule)."""
    if terminal:
        return float(reward)
    if legal_mask is None:
        legal_mask = np.ones(len(q_next), dtype=bool)
    masked = np.where(legal_mask, q_next, -np.inf)
    return float(reward + config.gamma * q_next[int(np.argmax(masked))])


def explore_action(q_values: np.ndarray, bc_probs: np.ndarray, epsilon: float,
                   config: BRConfig, rng: np.random.Generator,
                   legal_mask: np.ndarray | None = None) -> int:
    """Epsilon-greedy over the regularized (or vanilla) score."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    if legal_mask is None:
        legal_mask = np.ones(len(q_values), dtype=bool)
    legal = np.flatnonzero(legal_mask)
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(legal[rng.integers(len(legal))])
    if config.target_rule == "vanilla":
        scores = np.where(legal_mask, q_values, -np.inf)
    else:
        scores = regularized_scores(q_values, bc_probs, config.lambda_reg, legal_mask)
    return int(np.argmax(scores))


# -- episodes and replay --------------------------------------------------------


@dataclass
class Episode:
    """One cross-play game from the learner seat's perspective.

    ``leading_reward`` is team reward earned before the learner's first
    decision (possible when the partner opens), so that
    ``leading_reward + rewards.sum() == final_score`` exactly.
    """

    feats: np.ndarray  # (T, D) encoded views at the learner's decisions
    masks: np.ndarray  # (T, A) legality
    actions: np.ndarray  # (T,)
    rewards: np.ndarray  # (T,) team reward until the next learner decision
    bc_probs: np.ndarray  # (T, A) anchor distribution at each decision
    final_score: int = 0
    leading_reward: float = 0.0

    def __len__(self):
        return len(self.actions)


class EpisodeReplay:
    """Bounded episode store with optional max-TD prioritization."""

    def __init__(self, capacity: int, priority_exponent: float = 0.0):
        self.episodes: deque[Episode] = deque(maxlen=capacity)
        self.priorities: deque[float] = deque(maxlen=capacity)
        self.alpha = priority_exponent

    def add(self, episode: Episode, priority: float = 1.0):
        self.episodes.append(episode)
        self.priorities.append(max(priority, 1e-3))

    def __len__(self):
        return len(self.episodes)

    def sample(self, batch_size: int, rng: np.random.Generator):
        """(episode index, transition index) pairs."""
        n = len(self.episodes)
        if self.alpha == 0.0:
            eps_idx = rng.integers(n, size=batch_size)
        else:
            w = np.asarray(self.priorities) ** self.alpha
            eps_idx = rng.choice(n, size=batch_size, p=w / w.sum())
        out = []
        for e in eps_idx:
            t = int(rng.integers(len(self.episodes[e])))
            out.append((int(e), t))
        return out

    def update_priority(self, episode_index: int, td: float):
        if self.alpha > 0.0:
            self.priorities[episode_index] = max(
                self.priorities[episode_index], abs(td), 1e-3
            )


class HanabiBREnv:
    """Cross-play episode generator: learner seat vs. a frozen partner."""

    def __init__(self, config: GameConfig, partner: Policy, anchor: Policy):
        self.config = config
        self.partner = partner
        self.anchor = anchor
        self.encoder = FeatureEncoder(config, None)

    def generate(self, value_fn, epsilon: float, seed: int, br_seat: int,
                 partner_lambda: float | None, rng: np.random.Generator,
                 br_config: BRConfig) -> Episode:
        """``value_fn(feats) -> q row``; the partner plays greedily."""
        state = new_game(self.config, seed)
        histories = start_histories(state)
        feats, masks, actions, bc_rows = [], [], [], []
        rewards: list[float] = []
        leading = 0.0
        pending = 0.0  # team reward accrued since the last learner decision
        while not state.is_terminal:
            seat = state.active_player
            aoh = histories[seat]
            if seat == br_seat:
                obs = aoh.observation
                x = self.encoder.encode(obs, None)
                mask = np.zeros(self.config.num_actions, dtype=bool)
                mask[obs.legal_action_indices()] = True
                q = value_fn(x[None, :])[0]
                bc = self.anchor.action_probabilities(aoh)
                action = explore_action(q, bc, epsilon, br_config, rng, mask)
                if feats:
                    rewards.append(pending)
                else:
                    leading = pending
                pending = 0.0
                feats.append(x)
                masks.append(mask)
                actions.append(action)
                bc_rows.append(bc)
            else:
                action = self.partner.act_greedy(aoh, partner_lambda)
            outcome = state.step(action)
            pending += outcome.reward
            for a in histories:
                a.record(outcome, state)
        rewards.append(pending)
        final = state.termination().final_score
        if not feats:
            raise RuntimeError("episode ended before the learner ever acted")
        return Episode(
            feats=np.asarray(feats, dtype=np.float64),
            masks=np.asarray(masks),
            actions=np.asarray(actions, dtype=np.int64),
            rewards=np.asarray(rewards, dtype=np.float64),
            bc_probs=np.asarray(bc_rows, dtype=np.float64),
            final_score=final,
            leading_reward=leading,
        )


# -- backends ---------------------------------------------------------------------


class MLPQBackend:
    """Action-value MLP with a periodically synced bootstrap snapshot."""

    def __init__(self, input_dim: int, num_actions: int, config: BRConfig):
        self.net = MLP((input_dim, *config.hidden, num_actions), seed=config.seed)
        self.target = self.net.copy()
        self.opt = Adam(self.net.params, lr=config.learning_rate)
        self.grad_clip = config.grad_clip

    def values(self, feats: np.ndarray) -> np.ndarray:
        return self.net.forward(feats)

    def target_values(self, feats: np.ndarray) -> np.ndarray:
        return self.target.forward(feats)

    def sync_target(self):
        self.target = self.net.copy()

    def update(self, feats: np.ndarray, actions: np.ndarray,
               targets: np.ndarray) -> np.ndarray:
        cache = []
        q = self.net.forward(feats, cache)
        n = len(actions)
        picked = q[np.arange(n), actions]
        td = picked - targets
        dq = np.zeros_like(q)
        dq[np.arange(n), actions] = td / n
        grads = self.net.backward(cache, dq)
        clip_grads(grads, self.grad_clip)
        self.opt.step(self.net.params, grads)
        return np.abs(td)


class TabularQBackend:
    """Exact lookup table for tiny environments; keys are feature bytes."""

    def __init__(self, num_actions: int, learning_rate: float = 0.2):
        self.num_actions = num_actions
        self.lr = learning_rate
        self.table: dict[bytes, np.ndarray] = {}

    def _row(self, feat: np.ndarray) -> np.ndarray:
        key = np.asarray(feat, dtype=np.float64).tobytes()
        if key not in self.table:
            self.table[key] = np.zeros(self.num_actions)
        return self.table[key]

    def values(self, feats: np.ndarray) -> np.ndarray:
        return np.stack([self._row(f).copy() for f in np.atleast_2d(feats)])

    def target_values(self, feats: np.ndarray) -> np.ndarray:
        return self.values(feats)

    def sync_target(self):
        pass

    def update(self, feats: np.ndarray, actions: np.ndarray,
               targets: np.ndarray) -> np.ndarray:
        tds = np.zeros(len(actions))
        for i, (f, a, t) in enumerate(zip(np.atleast_2d(feats), actions, targets)):
            row = self._row(f)
            tds[i] = row[a] - t
            row[a] -= self.lr * (row[a] - t)
        return np.abs(tds)


# -- the training loop --------------------------------------------------------------


def fit_q(env, backend, config: BRConfig, progress=None) -> dict:
    """Generic anchored Q-learning driver shared by the game and toy tests.

    ``env.generate(value_fn, epsilon, seed, br_seat, partner_lambda, rng,
    config)`` must yield Episodes. Returns training statistics.
    """
    seq = np.random.SeedSequence(config.seed)
    eps_rng, lam_rng, act_rng, replay_rng = (
        np.random.Generator(np.random.PCG64(s)) for s in seq.spawn(4)
    )
    replay = EpisodeReplay(config.replay_capacity, config.priority_exponent)
    episode_counter = 0

    def new_episode():
        nonlocal episode_counter
        epsilon = float(eps_rng.uniform(0.0, config.epsilon_max))
        vocab = config.partner_lambda_vocabulary
        plam = float(vocab[lam_rng.integers(len(vocab))]) if vocab else None
        ep = env.generate(backend.values, epsilon, seed=config.seed * 100_003 + episode_counter,
                          br_seat=episode_counter % 2, partner_lambda=plam,
                          rng=act_rng, br_config=config)
        replay.add(ep)
        episode_counter += 1

    while len(replay) < config.min_replay:
        new_episode()

    window_tds: list[float] = []
    bad_windows = 0
    history = {"mean_abs_td": [], "episodes": 0}
    for step in range(config.training_steps):
        if step % config.generate_every == 0:
            new_episode()
        picks = replay.sample(config.batch_size, replay_rng)
        feats = np.stack([replay.episodes[e].feats[t] for e, t in picks])
        actions = np.asarray([replay.episodes[e].actions[t] for e, t in picks])
        targets = np.empty(len(picks))
        for row, (e, t) in enumerate(picks):
            ep = replay.episodes[e]
            reward = ep.rewards[t]
            if t + 1 >= len(ep):
                targets[row] = reward
                continue
            q_next = backend.target_values(ep.feats[t + 1][None, :])[0]
            if config.target_rule == "vanilla":
                targets[row] = vanilla_target(q_next, reward, config,
                                              legal_mask=ep.masks[t + 1])
            else:
                targets[row] = regularized_target(
                    q_next, ep.bc_probs[t + 1], reward, config,
                    legal_mask=ep.masks[t + 1],
                )
        tds = backend.update(feats, actions, targets)
        for row, (e, _t) in enumerate(picks):
            replay.update_priority(e, tds[row])
        window_tds.extend(tds.tolist())

        if (step + 1) % config.target_sync_every == 0:
            backend.sync_target()
        if (step + 1) % config.divergence_window == 0:
            mean_td = float(np.mean(window_tds))
            history["mean_abs_td"].append(mean_td)
            window_tds.clear()
            bad_windows = bad_windows + 1 if mean_td > config.divergence_td_cap else 0
            if bad_windows >= 3:
                raise TrainingDiverged(
                    f"mean |TD error| above {config.divergence_td_cap} for three windows"
                )
            if progress is not None:
                progress({"stage": "q_learning", "step": step + 1,
                          "mean_abs_td": round(mean_td, 4),
                          "episodes": episode_counter})
    history["episodes"] = episode_counter
    return history


def train_br(partner: Policy, anchor_bc: Policy, config: BRConfig,
             game_config: GameConfig | None = None, progress=None) -> QApproximatorPolicy:
    """Train the anchored best response to a frozen (possibly skill-conditioned)
    partner; returns the greedy policy over the learned action values."""
    game_config = game_config or partner.config
    env = HanabiBREnv(game_config, partner, anchor_bc)
    if partner.lambda_vocabulary is None:
        config = BRConfig(**{**config.__dict__, "partner_lambda_vocabulary": None})
    backend = MLPQBackend(env.encoder.dim, game_config.num_actions, config)
    history = fit_q(env, backend, config, progress=progress)
    policy = QApproximatorPolicy(game_config, backend.net, temperature=config.q_temperature)
    policy.train_history = history
    return policy
