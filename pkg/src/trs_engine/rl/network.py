"""Branching actor-critic network with hand-rolled reverse-mode gradients.

A small fully connected trunk feeds one softmax head per action branch plus
a scalar value head.  Forward passes cache activations; ``backward`` takes
gradients with respect to the branch logits and the value output and
accumulates parameter gradients by explicit backpropagation.  No autodiff
framework is involved, which keeps the artifact self-contained and the
gradient path verifiable against finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


@dataclass
class ForwardCache:
    x: np.ndarray
    hidden: list[np.ndarray]
    logits: list[np.ndarray]
    value: np.ndarray


class PolicyNetwork:
    """Two tanh hidden layers, one linear head per branch and a value head.

    ``input_scale`` divides raw observation entries so integer mode indices
    enter the trunk as O(1) features; it is part of the parameter record
    and travels with checkpoints.
    """

    def __init__(
        self,
        obs_dim: int,
        branch_sizes: tuple[int, ...],
        hidden: tuple[int, ...] = (128, 128),
        input_scale: np.ndarray | None = None,
        seed: int = 0,
    ):
        self.obs_dim = obs_dim
        self.branch_sizes = tuple(branch_sizes)
        self.hidden_sizes = tuple(hidden)
        self.input_scale = (
            np.ones(obs_dim) if input_scale is None else np.asarray(input_scale, float)
        )
        rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        prev = obs_dim
        for i, width in enumerate(hidden):
            self.params[f"W{i}"] = rng.normal(0.0, math.sqrt(1.0 / prev), (prev, width))
            self.params[f"b{i}"] = np.zeros(width)
            prev = width
        for k, size in enumerate(branch_sizes):
            # near-zero head weights make the initial policy near uniform
            self.params[f"Wh{k}"] = rng.normal(0.0, 0.01, (prev, size))
            self.params[f"bh{k}"] = np.zeros(size)
        self.params["Wv"] = rng.normal(0.0, math.sqrt(1.0 / prev), (prev, 1))
        self.params["bv"] = np.zeros(1)

    @property
    def n_layers(self) -> int:
        return len(self.hidden_sizes)

    def forward(self, x: np.ndarray) -> ForwardCache:
        x = np.atleast_2d(np.asarray(x, float)) / self.input_scale
        hidden = []
        h = x
        for i in range(self.n_layers):
            h = np.tanh(h @ self.params[f"W{i}"] + self.params[f"b{i}"])
            hidden.append(h)
        logits = [
            h @ self.params[f"Wh{k}"] + self.params[f"bh{k}"]
            for k in range(len(self.branch_sizes))
        ]
        value = (h @ self.params["Wv"] + self.params["bv"])[:, 0]
        return ForwardCache(x=x, hidden=hidden, logits=logits, value=value)

    def backward(
        self,
        cache: ForwardCache,
        dlogits: list[np.ndarray],
        dvalue: np.ndarray,
    ) -> dict[str, np.ndarray]:
        """Backpropagate output gradients into parameter gradients."""
        grads = {name: np.zeros_like(p) for name, p in self.params.items()}
        h_last = cache.hidden[-1]
        dh = dvalue[:, None] @ self.params["Wv"].T
        grads["Wv"] = h_last.T @ dvalue[:, None]
        grads["bv"] = np.array([dvalue.sum()])
        for k, dz in enumerate(dlogits):
            grads[f"Wh{k}"] = h_last.T @ dz
            grads[f"bh{k}"] = dz.sum(axis=0)
            dh = dh + dz @ self.params[f"Wh{k}"].T
        for i in range(self.n_layers - 1, -1, -1):
            da = dh * (1.0 - cache.hidden[i] ** 2)
            below = cache.hidden[i - 1] if i > 0 else cache.x
            grads[f"W{i}"] = below.T @ da
            grads[f"b{i}"] = da.sum(axis=0)
            dh = da @ self.params[f"W{i}"].T
        return grads

    def clone(self) -> "PolicyNetwork":
        twin = PolicyNetwork(
            self.obs_dim, self.branch_sizes, self.hidden_sizes, self.input_scale.copy()
        )
        twin.params = {k: v.copy() for k, v in self.params.items()}
        return twin

    def flat_params(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in sorted(self.params)])

    def set_flat_params(self, flat: np.ndarray) -> None:
        offset = 0
        for k in sorted(self.params):
            size = self.params[k].size
            self.params[k] = flat[offset : offset + size].reshape(self.params[k].shape)
            offset += size


@dataclass
class AdamOptimizer:
    """Standard Adam on the network's parameter dict."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    _m: dict = field(default_factory=dict)
    _v: dict = field(default_factory=dict)
    _t: int = 0

    def step(self, net: PolicyNetwork, grads: dict[str, np.ndarray]) -> None:
        self._t += 1
        for name, g in grads.items():
            if name not in self._m:
                self._m[name] = np.zeros_like(g)
                self._v[name] = np.zeros_like(g)
            self._m[name] = self.beta1 * self._m[name] + (1 - self.beta1) * g
            self._v[name] = self.beta2 * self._v[name] + (1 - self.beta2) * g * g
            m_hat = self._m[name] / (1 - self.beta1**self._t)
            v_hat = self._v[name] / (1 - self.beta2**self._t)
            net.params[name] = net.params[name] - self.lr * m_hat / (
                np.sqrt(v_hat) + self.eps
            )
