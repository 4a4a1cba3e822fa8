"""Dense networks with hand-written backpropagation, Adam, and checkpoints.

Weights are stored (fan_in, fan_out) so a batch ``x`` of shape (n, fan_in)
maps as ``x @ W + b``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import DimensionError, DipsError

HIDDEN_ACTIVATIONS = ("softplus", "silu", "tanh")
OUTPUT_ACTIVATIONS = ("identity", "logistic")


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    # split by sign so neither branch overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _act(name, z):
    if name == "softplus":
        return _softplus(z)
    if name == "silu":
        return z * _sigmoid(z)
    if name == "tanh":
        return np.tanh(z)
    if name == "identity":
        return z
    if name == "logistic":
        return _sigmoid(z)
    raise DipsError(f"unknown activation {name!r}")


def _act_grad(name, z, a):
    if name == "softplus":
        return _sigmoid(z)
    if name == "silu":
        s = _sigmoid(z)
        return s * (1.0 + z * (1.0 - s))
    if name == "tanh":
        return 1.0 - a * a
    if name == "identity":
        return np.ones_like(z)
    if name == "logistic":
        return a * (1.0 - a)
    raise DipsError(f"unknown activation {name!r}")


@dataclass
class MlpParams:
    sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden: str = "softplus"
    output: str = "identity"

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        if len(self.sizes) < 2:
            raise DimensionError("layer count", ">= 2", len(self.sizes))
        if self.hidden not in HIDDEN_ACTIVATIONS:
            raise DipsError(f"hidden activation must be one of {HIDDEN_ACTIVATIONS}")
        if self.output not in OUTPUT_ACTIVATIONS:
            raise DipsError(f"output activation must be one of {OUTPUT_ACTIVATIONS}")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.sizes[i], self.sizes[i + 1]):
                raise DimensionError(f"layer {i} weight", (self.sizes[i], self.sizes[i + 1]), W.shape)
            if b.shape != (self.sizes[i + 1],):
                raise DimensionError(f"layer {i} bias", (self.sizes[i + 1],), b.shape)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def arrays(self) -> list[np.ndarray]:
        """Parameters in declaration order: W0, b0, W1, b1, ..."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def with_arrays(self, arrays) -> "MlpParams":
        arrays = list(arrays)
        return MlpParams(self.sizes, arrays[0::2], arrays[1::2], self.hidden, self.output)

    def copy(self) -> "MlpParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    def zeros_like(self) -> "MlpParams":
        return self.with_arrays([np.zeros_like(a) for a in self.arrays()])

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())


def init_mlp(sizes, rng: np.random.Generator, hidden="softplus", output="identity", zero=False) -> MlpParams:
    """Gaussian fan-in initialization; biases start at zero."""
    sizes = tuple(int(s) for s in sizes)
    Ws, bs = [], []
    for i in range(len(sizes) - 1):
        if zero:
            W = np.zeros((sizes[i], sizes[i + 1]))
        else:
            W = rng.standard_normal((sizes[i], sizes[i + 1])) / np.sqrt(sizes[i])
        Ws.append(W)
        bs.append(np.zeros(sizes[i + 1]))
    return MlpParams(sizes, Ws, bs, hidden, output)


@dataclass
class Cache:
    inputs: list[np.ndarray]  # layer inputs (activations of the previous layer)
    pre: list[np.ndarray]  # pre-activations
    out: np.ndarray
    squeeze: bool


def forward(params: MlpParams, x) -> tuple[np.ndarray, Cache]:
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None]
    if x.ndim != 2 or x.shape[1] != params.sizes[0]:
        raise DimensionError("network input", params.sizes[0], x.shape[-1] if x.ndim else x.shape)
    inputs, pre = [], []
    a = x
    last = params.n_layers - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(a)
        z = a @ W + b
        pre.append(z)
        a = _act(params.output if i == last else params.hidden, z)
    y = a[0] if squeeze else a
    return y, Cache(inputs, pre, a, squeeze)


def predict(params: MlpParams, x) -> np.ndarray:
    return forward(params, x)[0]


def backward(params: MlpParams, cache: Cache, dy, wrt_logits: bool = False) -> MlpParams:
    """Reverse-mode gradients shaped like ``params``, summed over the batch.

    With ``wrt_logits`` the incoming gradient is taken with respect to the
    output pre-activation, which is the numerically sane route for a logistic
    head trained with cross-entropy.
    """
    dy = np.asarray(dy, dtype=float)
    if cache.squeeze and dy.ndim == 1:
        dy = dy[None]
    if dy.shape != cache.out.shape:
        raise DimensionError("output gradient", cache.out.shape, dy.shape)
    last = params.n_layers - 1
    gW = [None] * params.n_layers
    gb = [None] * params.n_layers
    g = dy
    for i in range(last, -1, -1):
        z = cache.pre[i]
        if i == last:
            if not wrt_logits:
                g = g * _act_grad(params.output, z, cache.out)
        else:
            a = _act(params.hidden, z) if params.hidden == "tanh" else None
            g = g * _act_grad(params.hidden, z, a)
        gW[i] = cache.inputs[i].T @ g
        gb[i] = g.sum(axis=0)
        if i > 0:
            g = g @ params.weights[i].T
    return MlpParams(params.sizes, gW, gb, params.hidden, params.output)


def input_gradient(params: MlpParams, cache: Cache, dy) -> np.ndarray:
    """Gradient of ``sum(dy * y)`` with respect to the network input."""
    dy = np.asarray(dy, dtype=float)
    if cache.squeeze and dy.ndim == 1:
        dy = dy[None]
    last = params.n_layers - 1
    g = dy
    for i in range(last, -1, -1):
        name = params.output if i == last else params.hidden
        z = cache.pre[i]
        a = cache.out if i == last else _act(name, z)
        g = (g * _act_grad(name, z, a)) @ params.weights[i].T
    return g[0] if cache.squeeze else g


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: MlpParams, lr: float = 1e-3) -> "AdamState":
        zeros = [np.zeros_like(a) for a in params.arrays()]
        return cls([z.copy() for z in zeros], zeros, 0, lr)


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState) -> tuple[MlpParams, AdamState]:
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params.arrays(), grads.arrays(), state.m, state.v):
        if p.shape != g.shape:
            raise DimensionError("gradient", p.shape, g.shape)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        mhat = m / (1.0 - b1**t)
        vhat = v / (1.0 - b2**t)
        new_p.append(p - state.lr * mhat / (np.sqrt(vhat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    st = AdamState(new_m, new_v, t, state.lr, b1, b2, state.eps)
    return params.with_arrays(new_p), st


# -- checkpoints ---------------------------------------------------------------

_LEN = struct.Struct("<Q")


def save_checkpoint(path, params: MlpParams, header: dict) -> Path:
    """Write ``<u64 header length><JSON header><float64 LE params>``."""
    path = Path(path)
    head = dict(header)
    head["layer_sizes"] = list(params.sizes)
    head["activations"] = {"hidden": params.hidden, "output": params.output}
    blob = json.dumps(head, sort_keys=True, separators=(",", ":")).encode()
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in params.arrays())
    path.write_bytes(_LEN.pack(len(blob)) + blob + body)
    return path


def load_checkpoint(path) -> tuple[MlpParams, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < _LEN.size:
        raise DipsError(f"{path}: truncated checkpoint")
    (n,) = _LEN.unpack_from(raw)
    head = json.loads(raw[_LEN.size : _LEN.size + n].decode())
    sizes = head["layer_sizes"]
    flat = np.frombuffer(raw, dtype="<f8", offset=_LEN.size + n)
    expected = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
    if flat.size != expected:
        raise DimensionError("checkpoint parameter count", expected, flat.size)
    arrays, k = [], 0
    for a, b in zip(sizes[:-1], sizes[1:]):
        arrays.append(flat[k : k + a * b].reshape(a, b).astype(float))
        k += a * b
        arrays.append(flat[k : k + b].astype(float))
        k += b
    act = head["activations"]
    params = MlpParams(tuple(sizes), arrays[0::2], arrays[1::2], act["hidden"], act["output"])
    return params, head
