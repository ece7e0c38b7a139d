"""Action-value function approximators.

Everything a learner needs to represent Q(s, a) over the 3-action space:

* ``Mlp``: a small fully connected network (ReLU hidden layers, linear
  output) stored as one flat float64 parameter vector so the hot forward
  and backward passes can run through the kernels module.  Training uses
  plain SGD or Adam on the squared error of the chosen action's value.
* ``ArrayQ``: a dense table over integer states, used by the small
  synthetic decision problems in the convergence tests.
* ``BinnedQ``: a table over uniformly binned continuous observations,
  the tabular counterpart of the network on the driving task.

All three expose ``action_values(state) -> (n_actions,)`` so policies and
update rules do not care which representation they are given.  Network
checkpoints round-trip exactly (float64 in, float64 out) via ``.npz``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels

CHECKPOINT_VERSION = 1


def layer_offsets(sizes: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray, int]:
    """Flat-vector offsets (weights, biases, total length) for layer sizes."""
    n_layers = len(sizes) - 1
    w_off = np.zeros(n_layers, dtype=np.int64)
    b_off = np.zeros(n_layers, dtype=np.int64)
    pos = 0
    for i in range(n_layers):
        w_off[i] = pos
        pos += sizes[i] * sizes[i + 1]
    for i in range(n_layers):
        b_off[i] = pos
        pos += sizes[i + 1]
    return w_off, b_off, pos


def xavier_uniform_init(sizes: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """Xavier-uniform weights, zero biases, packed into one flat vector."""
    w_off, b_off, total = layer_offsets(sizes)
    flat = np.zeros(total)
    for i in range(len(sizes) - 1):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        n = fan_in * fan_out
        flat[w_off[i]:w_off[i] + n] = rng.uniform(-limit, limit, size=n)
    return flat


class Mlp:
    """Flat-parameter ReLU network mapping observations to action values."""

    def __init__(self, sizes: tuple[int, ...] = (6, 64, 64, 3), seed: int = 0,
                 flat: np.ndarray | None = None):
        if len(sizes) < 2 or any(int(s) <= 0 for s in sizes):
            raise ValueError(f"bad layer sizes {sizes!r}")
        self.sizes = tuple(int(s) for s in sizes)
        self._dims = np.array(self.sizes, dtype=np.int64)
        self._w_off, self._b_off, self.n_params = layer_offsets(self.sizes)
        if flat is None:
            rng = np.random.default_rng(np.random.SeedSequence((0x4E7, seed)))
            self.flat = xavier_uniform_init(self.sizes, rng)
        else:
            flat = np.asarray(flat, dtype=np.float64)
            if flat.shape != (self.n_params,):
                raise ValueError(
                    f"parameter vector has shape {flat.shape}, "
                    f"expected ({self.n_params},)")
            self.flat = flat.copy()

    @property
    def n_actions(self) -> int:
        return self.sizes[-1]

    def values(self, X: np.ndarray) -> np.ndarray:
        """Action values for a batch of observations, shape (B, n_actions)."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.sizes[0]:
            raise ValueError(f"batch has shape {X.shape}, "
                             f"expected (B, {self.sizes[0]})")
        return kernels.mlp_values(self.flat, self._w_off, self._b_off,
                                  self._dims, X)

    def action_values(self, obs: np.ndarray) -> np.ndarray:
        """Action values for a single observation, shape (n_actions,)."""
        obs = np.asarray(obs, dtype=np.float64)
        return self.values(obs.reshape(1, -1))[0]

    def pre_activations(self, X: np.ndarray) -> list[np.ndarray]:
        """Hidden-layer pre-activation matrices for a batch.

        A numpy mirror of the forward pass.  The finite-difference
        audit uses these to keep every rectifier a safe margin away
        from its kink, where central differences legitimately disagree
        with the one-sided analytic subgradient.
        """
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.sizes[0]:
            raise ValueError(f"batch has shape {X.shape}, "
                             f"expected (B, {self.sizes[0]})")
        zs: list[np.ndarray] = []
        h = X
        for i in range(len(self.sizes) - 2):
            ni, no = self.sizes[i], self.sizes[i + 1]
            W = self.flat[self._w_off[i]:self._w_off[i] + ni * no]
            b = self.flat[self._b_off[i]:self._b_off[i] + no]
            z = h @ W.reshape(ni, no) + b
            zs.append(z)
            h = np.maximum(z, 0.0)
        return zs

    def loss_grad(self, X: np.ndarray, actions: np.ndarray,
                  targets: np.ndarray) -> tuple[float, np.ndarray]:
        """Mean squared error on the chosen actions and its gradient."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        actions = np.ascontiguousarray(actions, dtype=np.int64)
        targets = np.ascontiguousarray(targets, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != actions.shape[0] != targets.shape[0]:
            raise ValueError("batch size mismatch between X, actions, targets")
        if actions.min() < 0 or actions.max() >= self.n_actions:
            raise ValueError("action index out of range")
        loss, grad = kernels.mlp_loss_grad(self.flat, self._w_off, self._b_off,
                                           self._dims, X, actions, targets)
        return float(loss), grad

    def copy(self) -> "Mlp":
        return Mlp(self.sizes, flat=self.flat)

    def save(self, path: str) -> None:
        meta = json.dumps({"version": CHECKPOINT_VERSION, "sizes": self.sizes})
        np.savez(path, flat=self.flat, meta=np.array(meta))

    @classmethod
    def load(cls, path: str) -> "Mlp":
        with np.load(path) as data:
            meta = json.loads(str(data["meta"]))
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version in {path}")
            return cls(tuple(meta["sizes"]), flat=data["flat"])


def sync_target(online: Mlp, target: Mlp) -> None:
    """Copy the online network's parameters into the target network."""
    if online.sizes != target.sizes:
        raise ValueError("network shapes differ")
    target.flat[:] = online.flat


@dataclass
class SgdOptimizer:
    lr: float

    def step(self, net: Mlp, grad: np.ndarray) -> None:
        net.flat -= self.lr * grad


@dataclass
class AdamOptimizer:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    def step(self, net: Mlp, grad: np.ndarray) -> None:
        if self.m is None:
            self.m = np.zeros_like(net.flat)
            self.v = np.zeros_like(net.flat)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        net.flat -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(name: str, lr: float):
    if name == "sgd":
        return SgdOptimizer(lr)
    if name == "adam":
        return AdamOptimizer(lr)
    raise ValueError(f"unknown optimizer {name!r}")


def gradient_check(net: Mlp, X: np.ndarray, actions: np.ndarray,
                   targets: np.ndarray, h: float = 1e-4) -> float:
    """Max relative error of the analytic gradient vs central differences.

    Every coordinate is perturbed by +-h and the loss difference compared
    against the backward pass.  The denominator is floored at 1e-4 to keep
    vanishing coordinates (dead ReLU units have an exact zero on both
    sides) from inflating the ratio through float noise.
    """
    _, grad = net.loss_grad(X, actions, targets)
    worst = 0.0
    for i in range(net.n_params):
        orig = net.flat[i]
        net.flat[i] = orig + h
        hi, _ = net.loss_grad(X, actions, targets)
        net.flat[i] = orig - h
        lo, _ = net.loss_grad(X, actions, targets)
        net.flat[i] = orig
        numeric = (hi - lo) / (2.0 * h)
        denom = max(abs(numeric), abs(grad[i]), 1e-4)
        rel = abs(numeric - grad[i]) / denom
        if rel > worst:
            worst = rel
    return worst


class ArrayQ:
    """Dense action-value table over integer states."""

    def __init__(self, n_states: int, n_actions: int = 3):
        if n_states <= 0 or n_actions <= 0:
            raise ValueError("table dimensions must be positive")
        self.n_states = n_states
        self.n_actions = n_actions
        self.q = np.zeros((n_states, n_actions))

    def action_values(self, state: int) -> np.ndarray:
        return self.q[state]

    def adjust(self, state: int, action: int, delta: float) -> None:
        self.q[state, action] += delta

    def copy(self) -> "ArrayQ":
        out = ArrayQ(self.n_states, self.n_actions)
        out.q = self.q.copy()
        return out


class BinnedQ:
    """Action-value table over uniformly binned continuous observations.

    ``lows``/``highs`` bound each observation feature; values outside the
    range fall into the edge bins, so every observation maps to a state.
    """

    def __init__(self, bins: tuple[int, ...], lows: tuple[float, ...],
                 highs: tuple[float, ...], n_actions: int = 3):
        if not (len(bins) == len(lows) == len(highs)):
            raise ValueError("bins, lows, highs must have equal length")
        if any(b <= 0 for b in bins):
            raise ValueError("bin counts must be positive")
        if any(h <= l for l, h in zip(lows, highs)):
            raise ValueError("each high bound must exceed its low bound")
        self.bins = tuple(int(b) for b in bins)
        self.lows = np.asarray(lows, dtype=np.float64)
        self.highs = np.asarray(highs, dtype=np.float64)
        self.n_actions = n_actions
        self.q = np.zeros((int(np.prod(self.bins)), n_actions))

    def state_index(self, obs: np.ndarray) -> int:
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape != (len(self.bins),):
            raise ValueError(f"observation has shape {obs.shape}, "
                             f"expected ({len(self.bins)},)")
        frac = (obs - self.lows) / (self.highs - self.lows)
        idx = np.clip((frac * self.bins).astype(np.int64), 0,
                      np.array(self.bins) - 1)
        flat = 0
        for i, b in enumerate(self.bins):
            flat = flat * b + int(idx[i])
        return flat

    def action_values(self, obs: np.ndarray) -> np.ndarray:
        return self.q[self.state_index(obs)]

    def adjust(self, obs: np.ndarray, action: int, delta: float) -> None:
        self.q[self.state_index(obs), action] += delta
