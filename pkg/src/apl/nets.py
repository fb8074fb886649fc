"""Minimal dense-network kit with manual reverse-mode gradients.

Everything is float64: the networks here are tiny (a few thousand
parameters), so precision is free and finite-difference checks are sharp.
"""

from __future__ import annotations

import json

import numpy as np


class TrainingDiverged(RuntimeError):
    pass


def softmax(x):
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(x - x.max())
    return z / z.sum()


def relu(x):
    return np.maximum(x, 0.0)


class DenseNet:
    """Stack of affine layers with optional ReLU activations."""

    def __init__(self, dims, activations, rng):
        if len(activations) != len(dims) - 1:
            raise ValueError("need one activation per layer")
        self.dims = list(dims)
        self.activations = list(activations)
        self.W = []
        self.b = []
        for fan_in, fan_out, act in zip(dims[:-1], dims[1:], activations):
            if act not in ("relu", "none"):
                raise ValueError(f"unknown activation {act!r}")
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.W.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            self.b.append(np.zeros(fan_out))

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.W, self.b))

    def params(self):
        out = []
        for w, b in zip(self.W, self.b):
            out.extend([w, b])
        return out

    def forward(self, x):
        """Returns (output, cache); cache holds inputs and preactivations."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dims[0],):
            raise ValueError(f"expected input of dim {self.dims[0]}, got {x.shape}")
        inputs = []
        preacts = []
        for w, b, act in zip(self.W, self.b, self.activations):
            inputs.append(x)
            z = w @ x + b
            preacts.append(z)
            x = relu(z) if act == "relu" else z
        return x, (inputs, preacts)

    def backward(self, cache, gout):
        """Exact gradients; returns (param grads aligned with params(), dinput)."""
        inputs, preacts = cache
        g = np.asarray(gout, dtype=np.float64)
        grads_w = [None] * len(self.W)
        grads_b = [None] * len(self.b)
        for i in reversed(range(len(self.W))):
            if self.activations[i] == "relu":
                g = g * (preacts[i] > 0)
            grads_w[i] = np.outer(g, inputs[i])
            grads_b[i] = g.copy()
            g = self.W[i].T @ g
        out = []
        for gw, gb in zip(grads_w, grads_b):
            out.extend([gw, gb])
        return out, g


class GaussianHead:
    """Diagonal Gaussian with state-independent log standard deviations."""

    def __init__(self, dim, log_std_init=0.0):
        self.log_std = np.full(dim, float(log_std_init))

    @property
    def std(self):
        return np.exp(self.log_std)

    def sample(self, mean, rng):
        return np.asarray(mean) + self.std * rng.normal(size=len(self.log_std))

    def log_prob(self, mean, action):
        a = np.asarray(action, dtype=np.float64)
        mu = np.asarray(mean, dtype=np.float64)
        var = self.std ** 2
        return float(np.sum(-0.5 * (a - mu) ** 2 / var - self.log_std - 0.5 * np.log(2 * np.pi)))

    def log_prob_grads(self, mean, action):
        """(d logp / d mean, d logp / d log_std)."""
        a = np.asarray(action, dtype=np.float64)
        mu = np.asarray(mean, dtype=np.float64)
        var = self.std ** 2
        dmean = (a - mu) / var
        dlog_std = (a - mu) ** 2 / var - 1.0
        return dmean, dlog_std

    def entropy(self):
        return float(np.sum(self.log_std + 0.5 * np.log(2 * np.pi * np.e)))


class Adam:
    """Bias-corrected Adam over a list of parameter arrays."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        """Update params in place."""
        self.step_count += 1
        t = self.step_count
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if not np.all(np.isfinite(g)):
                raise TrainingDiverged("non-finite gradient")
            m += (1 - self.beta1) * (g - m)
            v += (1 - self.beta2) * (g * g - v)
            m_hat = m / (1 - self.beta1 ** t)
            v_hat = v / (1 - self.beta2 ** t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if not np.all(np.isfinite(p)):
                raise TrainingDiverged("non-finite parameter")


def save_checkpoint(path, arch: dict, step_count: int, params):
    """JSON header line + flat little-endian float64 block; bit-exact round-trip."""
    header = {"arch": arch, "step_count": step_count,
              "shapes": [list(p.shape) for p in params]}
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for p in params:
            f.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (arch, step_count, list of arrays)."""
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode())
        params = []
        for shape in header["shapes"]:
            n = int(np.prod(shape)) if shape else 1
            buf = f.read(n * 8)
            params.append(np.frombuffer(buf, dtype="<f8").reshape(shape).copy())
    return header["arch"], header["step_count"], params
