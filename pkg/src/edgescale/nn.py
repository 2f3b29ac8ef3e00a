"""Small numpy multilayer perceptrons with hand-written backpropagation."""

from __future__ import annotations

from pathlib import Path

import numpy as np


class Mlp:
    """Fully connected net, rectifier on hidden layers, linear output.

    ``forward`` caches what ``backward`` needs, so call them in pairs.
    """

    def __init__(self, sizes, rng=None):
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        self.sizes = tuple(int(s) for s in sizes)
        rng = np.random.default_rng(rng)
        self.params = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.params.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.params.append(np.zeros(fan_out))
        self._cache = None

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def copy(self) -> "Mlp":
        other = Mlp.__new__(Mlp)
        other.sizes = self.sizes
        other.params = [p.copy() for p in self.params]
        other._cache = None
        return other

    def load_params(self, other: "Mlp") -> None:
        for dst, src in zip(self.params, other.params):
            dst[...] = src

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        h = x[None] if single else x
        if h.shape[-1] != self.sizes[0]:
            raise ValueError(f"input has {h.shape[-1]} features, net expects {self.sizes[0]}")
        acts = [h]
        for layer in range(self.n_layers):
            W, b = self.params[2 * layer], self.params[2 * layer + 1]
            z = h @ W + b
            h = np.maximum(z, 0.0) if layer < self.n_layers - 1 else z
            acts.append(h)
        self._cache = acts
        return h[0] if single else h

    __call__ = forward

    def backward(self, dout):
        """Gradients for the last ``forward``; returns ``(d_input, param_grads)``."""
        acts = self._cache
        if acts is None:
            raise RuntimeError("backward called before forward")
        d = np.asarray(dout, dtype=float)
        if d.ndim == 1:
            d = d[None]
        grads = [None] * len(self.params)
        for layer in reversed(range(self.n_layers)):
            W = self.params[2 * layer]
            if layer < self.n_layers - 1:
                d = d * (acts[layer + 1] > 0)
            grads[2 * layer] = acts[layer].T @ d
            grads[2 * layer + 1] = d.sum(0)
            d = d @ W.T
        return d, grads

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    def dumps(self) -> str:
        lines = [" ".join(str(s) for s in self.sizes)]
        for p in self.params:
            for row in np.atleast_2d(p):
                lines.append(" ".join(format(v, ".17g") for v in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Mlp":
        return cls._from_lines(iter(text.splitlines()))

    @classmethod
    def _from_lines(cls, lines) -> "Mlp":
        sizes = [int(s) for s in next(lines).split()]
        net = cls(sizes, rng=0)
        for i, p in enumerate(net.params):
            rows = p.shape[0] if p.ndim == 2 else 1
            vals = [[float(v) for v in next(lines).split()] for _ in range(rows)]
            net.params[i] = np.array(vals).reshape(p.shape)
        return net

    @classmethod
    def load(cls, path) -> "Mlp":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


class Sgd:
    def __init__(self, lr=1e-3):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            mh = m / (1 - self.beta1 ** self.t)
            vh = v / (1 - self.beta2 ** self.t)
            p -= self.lr * mh / (np.sqrt(vh) + self.eps)


def numeric_grad(f, params, eps=1e-6):
    """Central finite differences of a scalar ``f()`` with respect to every parameter."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + eps
            hi = f()
            p[idx] = old - eps
            lo = f()
            p[idx] = old
            g[idx] = (hi - lo) / (2 * eps)
        out.append(g)
    return out
