"""A small fixed-topology MLP with exact reverse-mode gradients.

Parameters live in one flat float64 vector; layer weights and biases are
views into it, so optimizers and target-network updates work on the flat
vector directly.  Weight matrices are stored ``(fan_out, fan_in)`` followed by
the bias for each layer.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

ACTIVATIONS = ("tanh", "relu", "linear")


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(name, z, y):
    # derivative expressed through pre-activation z and output y
    if name == "tanh":
        return 1.0 - y * y
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    return None


class Mlp:
    def __init__(self, layer_sizes: Sequence[int], activation="relu",
                 output_activation: str = "linear", params=None):
        sizes = [int(n) for n in layer_sizes]
        if len(sizes) < 2 or any(n < 1 for n in sizes):
            raise ValueError(f"layer_sizes must hold at least two positive integers, got {layer_sizes}")
        n_hidden = len(sizes) - 2
        if isinstance(activation, str):
            activation = [activation] * n_hidden
        activation = list(activation)
        if len(activation) != n_hidden:
            raise ValueError(f"need {n_hidden} hidden activations, got {len(activation)}")
        for name in activation:
            if name not in ("tanh", "relu"):
                raise ValueError(f"hidden activation must be tanh or relu, got {name!r}")
        if output_activation not in ("linear", "tanh"):
            raise ValueError(f"output activation must be linear or tanh, got {output_activation!r}")
        self.layer_sizes = sizes
        self.activations = activation + [output_activation]
        self.n_params = sum((a + 1) * b for a, b in zip(sizes[:-1], sizes[1:]))
        self.params = np.zeros(self.n_params)
        if params is not None:
            self.set_params(params)
        self._bind()

    @property
    def output_activation(self) -> str:
        return self.activations[-1]

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def _bind(self):
        self.weights, self.biases = [], []
        offset = 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = self.params[offset:offset + fan_in * fan_out].reshape(fan_out, fan_in)
            offset += fan_in * fan_out
            b = self.params[offset:offset + fan_out]
            offset += fan_out
            self.weights.append(w)
            self.biases.append(b)

    def set_params(self, params) -> None:
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {params.shape}")
        self.params[:] = params

    def copy(self) -> "Mlp":
        return Mlp(self.layer_sizes, self.activations[:-1], self.output_activation, self.params.copy())

    def same_shape(self, other: "Mlp") -> bool:
        return self.layer_sizes == other.layer_sizes and self.activations == other.activations

    def init(self, rng: np.random.Generator, final_scale: float = 3e-3) -> "Mlp":
        """Fan-in uniform hidden layers, small uniform final layer."""
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            bound = final_scale if i == last else 1.0 / np.sqrt(w.shape[1])
            w[...] = rng.uniform(-bound, bound, size=w.shape)
            b[...] = rng.uniform(-bound, bound, size=b.shape)
        return self

    def _input(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x2 = x[None, :] if single else x
        if x2.ndim != 2 or x2.shape[1] != self.in_dim:
            raise ValueError(f"input must have trailing dimension {self.in_dim}, got shape {x.shape}")
        if not np.all(np.isfinite(x2)):
            raise ValueError("non-finite network input")
        return x2, single

    def _forward(self, x2):
        zs, ys = [], [x2]
        h = x2
        for w, b, name in zip(self.weights, self.biases, self.activations):
            z = h @ w.T + b
            h = _act(name, z)
            zs.append(z)
            ys.append(h)
        return zs, ys

    def forward(self, x) -> np.ndarray:
        """Evaluate on one input vector or a batch of row vectors."""
        x2, single = self._input(x)
        _, ys = self._forward(x2)
        return ys[-1][0] if single else ys[-1]

    __call__ = forward

    def backward(self, x, cotangent) -> tuple[np.ndarray, np.ndarray]:
        """Gradients of ``sum(forward(x) * cotangent)``.

        Returns the flat parameter gradient (summed over the batch) and the
        input gradient with the same shape as ``x``.
        """
        x2, single = self._input(x)
        g = np.asarray(cotangent, dtype=np.float64)
        g = g.reshape(1, -1) if single else g.reshape(x2.shape[0], -1)
        if g.shape != (x2.shape[0], self.out_dim):
            raise ValueError(f"cotangent shape {np.shape(cotangent)} does not match output")
        zs, ys = self._forward(x2)
        grads = []
        for i in range(len(self.weights) - 1, -1, -1):
            d = _act_grad(self.activations[i], zs[i], ys[i + 1])
            if d is not None:
                g = g * d
            grads.append((g.sum(axis=0), g.T @ ys[i]))
            g = g @ self.weights[i]
        flat = np.concatenate([np.concatenate([gw.ravel(), gb]) for gb, gw in reversed(grads)])
        return flat, (g[0] if single else g)


@dataclass
class TargetPair:
    online: Mlp
    target: Mlp
    tau: float = 1e-3

    def __post_init__(self):
        if not self.online.same_shape(self.target):
            raise ValueError("online and target networks must share a shape")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must be in (0, 1], got {self.tau}")

    @classmethod
    def of(cls, online: Mlp, tau: float) -> "TargetPair":
        return cls(online, online.copy(), tau)


def soft_sync(pair: TargetPair, tau: Optional[float] = None) -> TargetPair:
    """Move the target towards the online network: ``t <- tau o + (1 - tau) t``."""
    tau = pair.tau if tau is None else tau
    pair.target.params[:] = tau * pair.online.params + (1.0 - tau) * pair.target.params
    return pair


def huber(residual, delta: float = 1.0):
    """Huber loss and its derivative; quadratic branch is ``r**2 / 2``."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    r = np.asarray(residual, dtype=np.float64)
    a = np.abs(r)
    loss = np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))
    deriv = np.clip(r, -delta, delta)
    if loss.ndim == 0:
        return float(loss), float(deriv)
    return loss, deriv


@dataclass
class OptimizerState:
    """First-order optimizer state; ``kind`` is ``"adam"`` or ``"sgd"``."""

    lr: float
    kind: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    t: int = 0

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")


def optimizer_step(params, gradient, state: OptimizerState):
    """One descent step on ``gradient``; returns new params and state."""
    params = np.asarray(params, dtype=np.float64)
    gradient = np.asarray(gradient, dtype=np.float64)
    if params.shape != gradient.shape:
        raise ValueError(f"gradient shape {gradient.shape} does not match params {params.shape}")
    if state.kind == "sgd":
        return params - state.lr * gradient, state
    m = np.zeros_like(params) if state.m is None else state.m
    v = np.zeros_like(params) if state.v is None else state.v
    t = state.t + 1
    m = state.beta1 * m + (1.0 - state.beta1) * gradient
    v = state.beta2 * v + (1.0 - state.beta2) * gradient * gradient
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, OptimizerState(state.lr, state.kind, state.beta1, state.beta2, state.eps, m, v, t)


class Optimizer:
    """Binds an :class:`OptimizerState` to a network and updates it in place."""

    def __init__(self, net: Mlp, lr: float, kind: str = "adam"):
        self.net = net
        self.state = OptimizerState(lr=lr, kind=kind)

    def step(self, gradient) -> None:
        new, self.state = optimizer_step(self.net.params, gradient, self.state)
        self.net.params[:] = new


# Parameter files: one JSON header line, then the raw little-endian float64 vector.

def dump_params(net: Mlp) -> bytes:
    header = {"layer_sizes": net.layer_sizes, "activations": net.activations[:-1],
              "output_activation": net.output_activation, "n_params": net.n_params}
    buf = io.BytesIO()
    buf.write((json.dumps(header, sort_keys=True) + "\n").encode())
    buf.write(net.params.astype("<f8").tobytes())
    return buf.getvalue()


def parse_params(blob: bytes) -> Mlp:
    newline = blob.index(b"\n")
    header = json.loads(blob[:newline].decode())
    params = np.frombuffer(blob[newline + 1:], dtype="<f8")
    if params.size != header["n_params"]:
        raise ValueError(f"parameter file holds {params.size} values, header says {header['n_params']}")
    return Mlp(header["layer_sizes"], header["activations"], header["output_activation"], params.copy())


def save_params(net: Mlp, path) -> None:
    Path(path).write_bytes(dump_params(net))


def load_params(path) -> Mlp:
    return parse_params(Path(path).read_bytes())
