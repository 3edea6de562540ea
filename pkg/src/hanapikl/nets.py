"""Minimal feed-forward nets with Adam, tuned for tiny desk-scale models.

Hand-rolled on numpy rather than a framework: the models here are small
MLPs evaluated millions of times in Monte-Carlo rollout loops and forked
worker processes, where per-call overhead and bit-exact reproducibility
matter more than autograd generality. Gradients are verified against finite
differences in the test suite.
"""

from __future__ import annotations

import numpy as np

NEG_INF = -1e30  # mask value; avoids nan propagation from true -inf


def relu(x):
    return np.maximum(x, 0.0)


class MLP:
    """Fully connected ReLU network. Parameters are float64 numpy arrays."""

    def __init__(self, sizes: tuple[int, ...], seed: int = 0, zero_last: bool = False):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = tuple(int(s) for s in sizes)
        rng = np.random.Generator(np.random.PCG64(seed))
        self.weights = []
        self.biases = []
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            scale = np.sqrt(2.0 / fan_in)
            if zero_last and i == len(self.sizes) - 2:
                self.weights.append(np.zeros((fan_in, fan_out)))
            else:
                self.weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def params(self) -> list[np.ndarray]:
        return self.weights + self.biases

    def copy(self) -> "MLP":
        clone = MLP.__new__(MLP)
        clone.sizes = self.sizes
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone

    def forward(self, x: np.ndarray, cache: list | None = None) -> np.ndarray:
        """x: (batch, in_dim) -> logits (batch, out_dim)."""
        a = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if cache is not None:
                cache.append(a)
            z = a @ w + b
            a = relu(z) if i < len(self.weights) - 1 else z
        return a

    def backward(self, cache: list, dlogits: np.ndarray) -> list[np.ndarray]:
        """Gradients in the same order as ``params``."""
        grad_w = [None] * len(self.weights)
        grad_b = [None] * len(self.biases)
        delta = dlogits
        for i in reversed(range(len(self.weights))):
            a = cache[i]
            grad_w[i] = a.T @ delta
            grad_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (a > 0)
        return grad_w + grad_b

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, w in enumerate(self.weights):
            out[f"w{i}"] = w
        for i, b in enumerate(self.biases):
            out[f"b{i}"] = b
        return out

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "MLP":
        n = sum(1 for k in arrays if k.startswith("w"))
        net = cls.__new__(cls)
        net.weights = [np.asarray(arrays[f"w{i}"], dtype=np.float64) for i in range(n)]
        net.biases = [np.asarray(arrays[f"b{i}"], dtype=np.float64) for i in range(n)]
        net.sizes = tuple([net.weights[0].shape[0]] + [w.shape[1] for w in net.weights])
        return net


class Adam:
    """Adam with optional decoupled weight decay."""

    def __init__(self, params: list[np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999,
                 eps=1e-8, weight_decay=0.0):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if self.weight_decay:
                p *= 1.0 - self.lr * self.weight_decay
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def clip_grads(grads: list[np.ndarray], max_norm: float) -> float:
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= scale
    return total


def masked_log_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax restricted to ``mask``; masked entries get NEG_INF."""
    z = np.where(mask, logits, NEG_INF)
    z = z - z.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    return np.where(mask, logp, NEG_INF)


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    z = np.where(mask, logits, NEG_INF)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z) * mask
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_grad(logits: np.ndarray, targets: np.ndarray,
                       mask: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Mean NLL of integer ``targets`` plus dloss/dlogits, optionally masked."""
    n = logits.shape[0]
    if mask is None:
        mask = np.ones_like(logits, dtype=bool)
    logp = masked_log_softmax(logits, mask)
    loss = -float(logp[np.arange(n), targets].mean())
    probs = np.exp(np.where(mask, logp, NEG_INF))
    probs[~mask] = 0.0
    dlogits = probs
    dlogits[np.arange(n), targets] -= 1.0
    dlogits /= n
    return loss, dlogits
