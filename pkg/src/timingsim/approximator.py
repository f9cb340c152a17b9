"""Small dense networks with hand-derived gradients.

One parameter container serves three heads: a categorical softmax (actor),
a scalar value (critic) and a linear vector output (autoencoder decoder).
Hidden layers use the rectifier. A 1-D convolution layer pair is included for
the convolutional autoencoder detector.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

CHECKPOINT_FORMAT = "timingsim-params"
CHECKPOINT_VERSION = 1
HEADS = ("categorical", "scalar", "linear")


class CollapsedPolicy(FloatingPointError):
    """The probability of the requested action underflowed."""


@dataclass
class PolicyParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    head: str = "categorical"
    lr: float = 1e-3

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        if len(self.weights) != len(self.biases):
            raise ValueError("one bias per weight matrix")

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_outputs(self) -> int:
        return self.weights[-1].shape[1]

    def copy(self) -> "PolicyParams":
        return PolicyParams([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.head, self.lr)

    def is_finite(self) -> bool:
        return all(np.isfinite(w).all() for w in self.weights) and all(np.isfinite(b).all() for b in self.biases)


@dataclass
class Gradient:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def zeros_like(cls, params: PolicyParams) -> "Gradient":
        return cls([np.zeros_like(w) for w in params.weights], [np.zeros_like(b) for b in params.biases])

    def __add__(self, other: "Gradient") -> "Gradient":
        return Gradient([a + b for a, b in zip(self.weights, other.weights)],
                        [a + b for a, b in zip(self.biases, other.biases)])

    def scaled(self, k: float) -> "Gradient":
        return Gradient([k * w for w in self.weights], [k * b for b in self.biases])

    def norm(self) -> float:
        sq = sum(float(np.sum(w * w)) for w in self.weights) + sum(float(np.sum(b * b)) for b in self.biases)
        return math.sqrt(sq)

    def flat(self) -> np.ndarray:
        return np.concatenate([np.ravel(a) for pair in zip(self.weights, self.biases) for a in pair])


def init_params(sizes: Sequence[int], head: str = "categorical", lr: float = 1e-3,
                rng: np.random.Generator | None = None, zero: bool = False) -> PolicyParams:
    """Fan-based uniform initialisation, limit sqrt(6 / (fan_in + fan_out))."""
    rng = rng if rng is not None else np.random.default_rng(0)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        if zero:
            weights.append(np.zeros((fan_in, fan_out)))
        else:
            lim = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return PolicyParams(weights, biases, head, lr)


def _check_input(params: PolicyParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.weights[0].shape[0]:
        raise ValueError(f"input length {x.shape[-1]} != fan_in {params.weights[0].shape[0]}")
    if not np.isfinite(x).all():
        raise ValueError("non-finite input")
    return x


def _forward(params: PolicyParams, x: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Returns the list of layer inputs and the pre-head output."""
    acts = [x]
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        if i < last:
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            return acts, z
    raise AssertionError("unreachable")


def forward_cache(params: PolicyParams, x) -> tuple[list[np.ndarray], np.ndarray]:
    """Forward pass keeping the layer inputs needed by :func:`backward`."""
    return _forward(params, _check_input(params, x))


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward_categorical(params: PolicyParams, x) -> np.ndarray:
    x = _check_input(params, x)
    _, z = _forward(params, x)
    return softmax(z)


def forward_scalar(params: PolicyParams, x) -> float:
    x = _check_input(params, x)
    _, z = _forward(params, x)
    return float(z[..., 0]) if z.ndim == 1 else z[..., 0]


def forward_linear(params: PolicyParams, x) -> np.ndarray:
    x = _check_input(params, x)
    return _forward(params, x)[1]


def backward(params: PolicyParams, acts: list[np.ndarray], dout: np.ndarray) -> Gradient:
    """Backpropagate d(objective)/d(output logits) through the network.

    Works on a single sample (1-D) or a batch (2-D, gradients summed).
    """
    n = len(params.weights)
    gw: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    delta = dout
    for i in range(n - 1, -1, -1):
        a = acts[i]
        if a.ndim == 1:
            gw[i] = np.outer(a, delta)
            gb[i] = delta.copy()
        else:
            gw[i] = a.T @ delta
            gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * (acts[i] > 0)
    if not all(np.isfinite(g).all() for g in gw):
        raise FloatingPointError("non-finite gradient")
    return Gradient(gw, gb)


def grad_log_prob(params: PolicyParams, x, action_index: int) -> Gradient:
    """Gradient of ln pi(action | x) with respect to every parameter."""
    if params.head != "categorical":
        raise ValueError("grad_log_prob needs a categorical head")
    x = _check_input(params, x)
    n_act = params.n_outputs
    if not 0 <= action_index < n_act:
        raise IndexError(f"action {action_index} outside [0, {n_act})")
    acts, z = _forward(params, x)
    p = softmax(z)
    if p[action_index] < 1e-30:
        raise CollapsedPolicy(f"pi(a={action_index}) = {p[action_index]:.3g}")
    dz = -p
    dz[action_index] += 1.0
    return backward(params, acts, dz)


def grad_scalar(params: PolicyParams, x) -> Gradient:
    """Gradient of the scalar head output with respect to every parameter."""
    x = _check_input(params, x)
    acts, z = _forward(params, x)
    return backward(params, acts, np.ones_like(z))


def sgd_step(params: PolicyParams, gradient: Gradient, scale: float) -> PolicyParams:
    """params + lr * scale * gradient; the sign of ``scale`` picks ascent or descent."""
    if not math.isfinite(scale):
        raise ValueError("non-finite step scale")
    k = params.lr * scale
    if len(gradient.weights) != len(params.weights) or any(
            g.shape != w.shape for g, w in zip(gradient.weights, params.weights)):
        raise ValueError("gradient shape does not match parameters")
    return PolicyParams([w + k * g for w, g in zip(params.weights, gradient.weights)],
                        [b + k * g for b, g in zip(params.biases, gradient.biases)],
                        params.head, params.lr)


def clip_global_norm(gradient: Gradient, max_norm: float = 1.0) -> Gradient:
    norm = gradient.norm()
    if norm <= max_norm or norm == 0:
        return gradient
    return gradient.scaled(max_norm / norm)


def params_to_dict(params: PolicyParams) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "head": params.head,
        "lr": params.lr,
        "layers": [
            {"shape": list(w.shape), "weight": [float(v).hex() for v in w.ravel()],
             "bias": [float(v).hex() for v in b]}
            for w, b in zip(params.weights, params.biases)
        ],
    }


def params_from_dict(d: dict) -> PolicyParams:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a timingsim parameter checkpoint")
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')}")
    weights, biases = [], []
    for layer in d["layers"]:
        shape = tuple(layer["shape"])
        weights.append(np.array([float.fromhex(v) for v in layer["weight"]]).reshape(shape))
        biases.append(np.array([float.fromhex(v) for v in layer["bias"]]))
    return PolicyParams(weights, biases, d["head"], float(d["lr"]))


def save_params(params: PolicyParams, path) -> None:
    with open(path, "w") as fh:
        json.dump(params_to_dict(params), fh)


def load_params(path) -> PolicyParams:
    with open(path) as fh:
        return params_from_dict(json.load(fh))


# --- 1-D convolution (time axis) -------------------------------------------


@dataclass
class Conv1D:
    """'Same'-padded 1-D convolution over (time, channels) inputs."""

    weight: np.ndarray  # (kernel, c_in, c_out)
    bias: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.bias is None:
            self.bias = np.zeros(self.weight.shape[2])

    @classmethod
    def init(cls, kernel: int, c_in: int, c_out: int, rng: np.random.Generator) -> "Conv1D":
        lim = math.sqrt(6.0 / (kernel * c_in + kernel * c_out))
        return cls(rng.uniform(-lim, lim, size=(kernel, c_in, c_out)))

    @property
    def kernel(self) -> int:
        return self.weight.shape[0]

    def _columns(self, x: np.ndarray) -> np.ndarray:
        # x: (batch, T, c_in) -> (batch, T, kernel * c_in)
        k = self.kernel
        pad = k // 2
        xp = np.pad(x, ((0, 0), (pad, k - 1 - pad), (0, 0)))
        T = x.shape[1]
        cols = np.stack([xp[:, j:j + T, :] for j in range(k)], axis=2)
        return cols.reshape(x.shape[0], T, -1)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        cols = self._columns(x)
        w = self.weight.reshape(-1, self.weight.shape[2])
        return cols @ w + self.bias, cols

    def backward(self, cols: np.ndarray, dout: np.ndarray, need_input_grad: bool = True):
        k, c_in, c_out = self.weight.shape
        gw = np.einsum("btf,bto->fo", cols, dout).reshape(k, c_in, c_out)
        gb = dout.sum(axis=(0, 1))
        if not need_input_grad:
            return gw, gb, None
        dcols = (dout @ self.weight.reshape(-1, c_out).T).reshape(dout.shape[0], dout.shape[1], k, c_in)
        pad = k // 2
        T = dout.shape[1]
        dxp = np.zeros((dout.shape[0], T + k - 1, c_in))
        for j in range(k):
            dxp[:, j:j + T, :] += dcols[:, :, j, :]
        return gw, gb, dxp[:, pad:pad + T, :]
