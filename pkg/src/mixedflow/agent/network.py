"""Fully connected ReLU Q-network with hand-written backprop, plus Adam."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np


class NonFiniteError(FloatingPointError):
    """Non-finite weights, outputs or loss."""


class QNetwork:
    """ReLU on hidden layers, identity output. ``W[k]`` has shape (fan_in, fan_out)."""

    def __init__(self, sizes, rng: np.random.Generator | None = None, zero: bool = False):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.W: list[np.ndarray] = []
        self.b: list[np.ndarray] = []
        rng = rng if rng is not None else np.random.default_rng(0)
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            if zero:
                self.W.append(np.zeros((fan_in, fan_out)))
            else:
                self.W.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
            self.b.append(np.zeros(fan_out))

    # parameters ---------------------------------------------------------
    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.W, self.b):
            out += [W, b]
        return out

    def set_params(self, params) -> None:
        params = list(params)
        self.W = [np.array(p, dtype=float) for p in params[0::2]]
        self.b = [np.array(p, dtype=float) for p in params[1::2]]

    def copy(self) -> "QNetwork":
        net = QNetwork.__new__(QNetwork)
        net.sizes = self.sizes
        net.W = [w.copy() for w in self.W]
        net.b = [b.copy() for b in self.b]
        return net

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def digest(self) -> str:
        return hashlib.sha256(self.flat().tobytes()).hexdigest()

    def check_finite(self) -> None:
        for k, p in enumerate(self.params()):
            if not np.all(np.isfinite(p)):
                raise NonFiniteError(f"parameter array {k} contains non-finite values")

    # passes ---------------------------------------------------------------
    def forward(self, x, cache: bool = False):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[1] != self.sizes[0]:
            raise ValueError(f"input width {h.shape[1]} != {self.sizes[0]}")
        acts = [h]
        last = len(self.W) - 1
        for k, (W, b) in enumerate(zip(self.W, self.b)):
            z = h @ W + b
            h = z if k == last else np.maximum(z, 0.0)
            acts.append(h)
        if not np.all(np.isfinite(h)):
            self.check_finite()
            raise NonFiniteError("network output is non-finite")
        out = h[0] if single else h
        return (out, acts) if cache else out

    def backward(self, acts, d_out) -> list[np.ndarray]:
        """Gradients (dW0, db0, dW1, ...) of a loss whose output gradient is ``d_out``."""
        grads_W = [None] * len(self.W)
        grads_b = [None] * len(self.W)
        g = np.asarray(d_out, dtype=float)
        for k in range(len(self.W) - 1, -1, -1):
            grads_W[k] = acts[k].T @ g
            grads_b[k] = g.sum(axis=0)
            if k:
                g = (g @ self.W[k].T) * (acts[k] > 0)
        out = []
        for gW, gb in zip(grads_W, grads_b):
            out += [gW, gb]
        return out


@dataclass
class Adam:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
        """In-place update of ``params``."""
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        # bias corrections folded into the step size and epsilon
        a = lr * np.sqrt(c2) / c1
        e = self.eps * np.sqrt(c2)
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            tmp = g * g
            tmp *= 1.0 - self.beta2
            v += tmp
            np.sqrt(v, out=tmp)
            tmp += e
            np.divide(m, tmp, out=tmp)
            tmp *= a
            p -= tmp
