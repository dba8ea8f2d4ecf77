"""Small numpy multilayer perceptrons with hand-written backprop and Adam."""

from __future__ import annotations

import numpy as np


class MLP:
    """Affine layers with ReLU between them and a linear output layer.

    Weights are stored as ``(fan_in, fan_out)`` matrices and initialized
    uniformly in ``+-1/sqrt(fan_in)``.
    """

    def __init__(self, sizes, rng: np.random.Generator | None = None):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.params = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            if rng is None:
                w = np.zeros((fan_in, fan_out))
            else:
                lim = 1.0 / np.sqrt(fan_in)
                w = rng.uniform(-lim, lim, size=(fan_in, fan_out))
            b = np.zeros(fan_out) if rng is None else rng.uniform(
                -1.0 / np.sqrt(fan_in), 1.0 / np.sqrt(fan_in), size=fan_out)
            self.params += [w, b]

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    def copy(self) -> "MLP":
        new = object.__new__(type(self))
        new.__dict__.update(self.__dict__)
        new.params = [p.copy() for p in self.params]
        return new

    def forward(self, x: np.ndarray, cache: bool = False):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n_in:
            raise ValueError(f"input dimension {x.shape[-1]} != {self.n_in}")
        acts = [x]
        h = x
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            w, b = self.params[2 * i], self.params[2 * i + 1]
            z = h @ w + b
            h = np.maximum(z, 0.0) if i < n_layers - 1 else z
            acts.append(h)
        return (h, acts) if cache else h

    def backward(self, acts, dout: np.ndarray):
        """Gradients of ``sum(dout * output)`` wrt parameters and input."""
        grads = [None] * len(self.params)
        n_layers = len(self.params) // 2
        delta = dout
        for i in reversed(range(n_layers)):
            h_in = acts[i]
            w = self.params[2 * i]
            grads[2 * i] = h_in.T @ delta if h_in.ndim == 2 else np.outer(h_in, delta)
            grads[2 * i + 1] = delta.sum(axis=0) if delta.ndim == 2 else delta
            delta = delta @ w.T
            if i > 0:
                delta = delta * (acts[i] > 0)
        return grads, delta

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params)


class Adam:
    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}

    def copy(self) -> "Adam":
        new = Adam([], self.lr, self.beta1, self.beta2, self.eps)
        new.m = [a.copy() for a in self.m]
        new.v = [a.copy() for a in self.v]
        new.t = self.t
        return new


def huber(err: np.ndarray, delta: float = 1.0):
    """Elementwise Huber loss and its derivative."""
    a = np.abs(err)
    loss = np.where(a <= delta, 0.5 * err * err, delta * (a - 0.5 * delta))
    grad = np.clip(err, -delta, delta)
    return loss, grad


def sigmoid(z: np.ndarray) -> np.ndarray:
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                    np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
