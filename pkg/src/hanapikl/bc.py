"""Behavioral cloning on game records, with color-shuffle augmentation.

Each player's view of each move is a separate training sample. If a record
carries skill labels on some moves (search-generated data), only the labeled
moves are used; unlabeled records contribute every move.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import GameConfig, observe
from .features import FeatureEncoder
from .nets import MLP, Adam, clip_grads, cross_entropy_grad
from .policies import ApproximatorPolicy
from .records import GameRecord, apply_color_permutation


@dataclass
class TrainConfig:
    hidden: tuple[int, ...] = (192, 128)
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 20
    grad_clip: float = 10.0
    val_fraction: float = 0.05
    seed: int = 0
    lambda_vocabulary: tuple[float, ...] | None = None


def extract_samples(record: GameRecord, encoder: FeatureEncoder, conditioned: bool):
    """(features, action, legal_mask) for every usable decision in a record."""
    labeled_only = record.has_labels()
    num_actions = record.config.num_actions
    xs, ys, masks = [], [], []

    def on_step(state, mv):
        if labeled_only and mv.lambda_label is None:
            return
        obs = observe(state, mv.player)
        lam = mv.lambda_label if conditioned else None
        xs.append(encoder.encode(obs, lam))
        ys.append(mv.action)
        mask = np.zeros(num_actions, dtype=bool)
        mask[state.legal_action_indices()] = True
        masks.append(mask)

    record.replay(on_step=on_step)
    return xs, ys, masks


def _stack_samples(records, encoder, conditioned, perm_rng=None):
    xs, ys, masks = [], [], []
    for rec in records:
        if perm_rng is not None:
            perm = perm_rng.permutation(rec.config.colors).tolist()
            rec = apply_color_permutation(rec, perm)
        x, y, m = extract_samples(rec, encoder, conditioned)
        xs.extend(x)
        ys.extend(y)
        masks.extend(m)
    if not xs:
        raise ValueError("no usable training samples in the dataset")
    return (
        np.stack(xs).astype(np.float64),
        np.asarray(ys, dtype=np.int64),
        np.stack(masks),
    )


def infer_lambda_vocabulary(records) -> tuple[float, ...] | None:
    values = sorted({
        mv.lambda_label for rec in records for mv in rec.moves if mv.lambda_label is not None
    })
    return tuple(values) if values else None


def bc_train(
    dataset: list[GameRecord],
    use_color_shuffle: bool = False,
    condition_on_lambda: bool = False,
    hyper: TrainConfig | None = None,
) -> ApproximatorPolicy:
    """Train an imitation policy; returns the epoch with best held-out accuracy.

    The validation split is the last 5% of games by record order (at least
    one game; with a single-game dataset that game doubles as both splits,
    which is only useful for memorization checks). With color shuffling,
    every epoch re-derives each training game under a fresh random color
    permutation applied to inputs and targets alike.
    """
    hyper = hyper or TrainConfig()
    if not dataset:
        raise ValueError("dataset is empty")
    config = dataset[0].config
    vocab = hyper.lambda_vocabulary
    if condition_on_lambda and vocab is None:
        vocab = infer_lambda_vocabulary(dataset)
        if vocab is None:
            raise ValueError("condition_on_lambda requires labeled records or a vocabulary")
    encoder = FeatureEncoder(config, vocab if condition_on_lambda else None)

    n_val = max(1, round(hyper.val_fraction * len(dataset)))
    if n_val >= len(dataset):
        train_records, val_records = dataset, dataset
    else:
        train_records, val_records = dataset[:-n_val], dataset[-n_val:]

    rng = np.random.Generator(np.random.PCG64(hyper.seed))
    x_val, y_val, m_val = _stack_samples(val_records, encoder, condition_on_lambda)
    static_train = None
    if not use_color_shuffle:
        static_train = _stack_samples(train_records, encoder, condition_on_lambda)

    net = MLP((encoder.dim, *hyper.hidden, config.num_actions), seed=hyper.seed)
    opt = Adam(net.params, lr=hyper.learning_rate)
    best = (-1.0, None, -1)  # (val accuracy, params, epoch)
    history = {"train_loss": [], "val_accuracy": []}

    for epoch in range(hyper.epochs):
        if use_color_shuffle:
            x, y, m = _stack_samples(train_records, encoder, condition_on_lambda, perm_rng=rng)
        else:
            x, y, m = static_train
        order = rng.permutation(len(x))
        losses = []
        for lo in range(0, len(order), hyper.batch_size):
            idx = order[lo:lo + hyper.batch_size]
            cache = []
            logits = net.forward(x[idx], cache)
            loss, dlogits = cross_entropy_grad(logits, y[idx], m[idx])
            grads = net.backward(cache, dlogits)
            clip_grads(grads, hyper.grad_clip)
            opt.step(net.params, grads)
            losses.append(loss)

        val_logits = np.where(m_val, net.forward(x_val), -np.inf)
        val_acc = float((val_logits.argmax(axis=1) == y_val).mean())
        history["train_loss"].append(float(np.mean(losses)))
        history["val_accuracy"].append(val_acc)
        if val_acc > best[0]:
            best = (val_acc, [p.copy() for p in net.params], epoch)

    n_w = len(net.weights)
    net.weights = best[1][:n_w]
    net.biases = best[1][n_w:]
    policy = ApproximatorPolicy(config, net, vocab if condition_on_lambda else None)
    policy.train_history = dict(history, best_epoch=best[2], best_val_accuracy=best[0])
    return policy
