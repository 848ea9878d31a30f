"""Feed-forward networks with hand-written reverse mode, Adam and Polyak averaging.

Inputs are batches ``x`` of shape ``(batch, in_dim)``; weights are stored as
``(in_dim, out_dim)`` so a layer computes ``x @ W + b``. Every reduction is a
plain numpy call on float64 arrays in a fixed order, so training is
reproducible for fixed seeds.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import RngStream

ACTIVATIONS = ("identity", "tanh")
LN_EPS = 1e-5
CHECKPOINT_MAGIC = b"FACMLP\x00\x00"
CHECKPOINT_VERSION = 1


class StaleCacheError(RuntimeError):
    pass


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    output_activation: str = "identity"
    layer_norm: bool = False
    version: int = 0

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ValueError(f"layer {i}: bias shape {b.shape} does not match weight {W.shape}")
            if i and W.shape[0] != self.weights[i - 1].shape[1]:
                raise ValueError(f"layer {i} input dim {W.shape[0]} does not chain")
        if self.output_activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.output_activation!r}")

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def arrays(self) -> list[np.ndarray]:
        """Parameters in canonical order: W0, b0, W1, b1, ..."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([W.copy() for W in self.weights], [b.copy() for b in self.biases],
                         self.output_activation, self.layer_norm)

    def zeros_like(self) -> "MlpParams":
        return MlpParams([np.zeros_like(W) for W in self.weights], [np.zeros_like(b) for b in self.biases],
                         self.output_activation, self.layer_norm)


@dataclass
class Cache:
    params_id: int
    version: int
    x: np.ndarray
    pre: list[np.ndarray] = field(default_factory=list)  # affine outputs
    normed: list[np.ndarray] = field(default_factory=list)  # layer-norm outputs (hidden only)
    inv_std: list[np.ndarray] = field(default_factory=list)
    acts: list[np.ndarray] = field(default_factory=list)  # layer outputs


def init_mlp(rng: RngStream, dims, output_activation: str = "identity",
             layer_norm: bool = False) -> MlpParams:
    dims = list(dims)
    if len(dims) < 2:
        raise ValueError("dims must list at least input and output sizes")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases, output_activation, layer_norm)


def forward(p: MlpParams, x) -> tuple[np.ndarray, Cache]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] != p.weights[0].shape[0]:
        raise ValueError(f"input dim {x.shape[1]} does not match network input {p.weights[0].shape[0]}")
    cache = Cache(id(p), p.version, x)
    h = x
    last = p.n_layers - 1
    for i, (W, b) in enumerate(zip(p.weights, p.biases)):
        z = h @ W + b
        cache.pre.append(z)
        if i < last:
            if p.layer_norm:
                mu = z.mean(axis=1, keepdims=True)
                var = ((z - mu) ** 2).mean(axis=1, keepdims=True)
                inv = 1.0 / np.sqrt(var + LN_EPS)
                z = (z - mu) * inv
                cache.inv_std.append(inv)
                cache.normed.append(z)
            h = np.tanh(z)
        else:
            h = np.tanh(z) if p.output_activation == "tanh" else z
        cache.acts.append(h)
    return (h[0] if squeeze else h), cache


def backward(p: MlpParams, cache: Cache, dLdy) -> tuple[MlpParams, np.ndarray]:
    """Gradients of a scalar loss w.r.t. parameters and input, given dL/dy."""
    if cache.params_id != id(p) or cache.version != p.version:
        raise StaleCacheError("cache was produced by different or since-updated parameters")
    g = np.asarray(dLdy, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    grads = p.zeros_like()
    last = p.n_layers - 1
    for i in range(last, -1, -1):
        h = cache.acts[i]
        if i == last:
            if p.output_activation == "tanh":
                g = g * (1.0 - h * h)
        else:
            g = g * (1.0 - h * h)
            if p.layer_norm:
                n = cache.normed[i]
                g = cache.inv_std[i] * (g - g.mean(axis=1, keepdims=True)
                                        - n * (g * n).mean(axis=1, keepdims=True))
        inp = cache.x if i == 0 else cache.acts[i - 1]
        grads.weights[i] = inp.T @ g
        grads.biases[i] = g.sum(axis=0)
        g = g @ p.weights[i].T
    return grads, (g[0] if np.ndim(dLdy) == 1 else g)


def add_grads(a: MlpParams, b: MlpParams) -> MlpParams:
    out = a.zeros_like()
    for i in range(a.n_layers):
        out.weights[i] = a.weights[i] + b.weights[i]
        out.biases[i] = a.biases[i] + b.biases[i]
    return out


def _check_shapes(a: MlpParams, b: MlpParams) -> None:
    if [x.shape for x in a.arrays()] != [x.shape for x in b.arrays()]:
        raise ValueError("parameter shapes do not match")


@dataclass
class OptState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(p: MlpParams, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> OptState:
    return OptState([np.zeros_like(a) for a in p.arrays()], [np.zeros_like(a) for a in p.arrays()],
                    0, lr, beta1, beta2, eps)


def adam_step(opt: OptState, p: MlpParams, grads: MlpParams) -> tuple[OptState, MlpParams]:
    """One bias-corrected Adam update, applied in place."""
    _check_shapes(p, grads)
    opt.step += 1
    c1 = 1.0 - opt.beta1 ** opt.step
    c2 = 1.0 - opt.beta2 ** opt.step
    for param, g, m, v in zip(p.arrays(), grads.arrays(), opt.m, opt.v):
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        param -= opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    p.version += 1
    return opt, p


def polyak_update(target: MlpParams, online: MlpParams, tau: float) -> MlpParams:
    _check_shapes(target, online)
    if not (0.0 < tau <= 1.0):
        raise ValueError("tau must lie in (0, 1]")
    for t, o in zip(target.arrays(), online.arrays()):
        t *= 1.0 - tau
        t += tau * o
    target.version += 1
    return target


# Checkpoint layout (little-endian):
#   8 bytes  magic b"FACMLP\0\0"
#   u32      format version (1)
#   u32      number of layers L
#   u32 x (L+1)  layer dims, input first
#   u8       output activation tag (0 identity, 1 tanh); hidden layers are tanh
#   u8       layer-norm flag
#   f64 ...  for each layer in order: W row-major (in_dim, out_dim), then b
def save_checkpoint(p: MlpParams, path) -> None:
    dims = p.dims
    header = CHECKPOINT_MAGIC + struct.pack(f"<II{len(dims)}IBB", CHECKPOINT_VERSION, p.n_layers, *dims,
                                            ACTIVATIONS.index(p.output_activation), int(p.layer_norm))
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in p.arrays())
    Path(path).write_bytes(header + body)


def load_checkpoint(path) -> MlpParams:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not an MLP checkpoint")
    version, n_layers = struct.unpack_from("<II", data, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    dims = struct.unpack_from(f"<{n_layers + 1}I", data, off)
    off += 4 * (n_layers + 1)
    act, ln = struct.unpack_from("<BB", data, off)
    off += 2
    flat = np.frombuffer(data, dtype="<f8", offset=off).astype(np.float64)
    weights, biases, k = [], [], 0
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(flat[k:k + fan_in * fan_out].reshape(fan_in, fan_out).copy())
        k += fan_in * fan_out
        biases.append(flat[k:k + fan_out].copy())
        k += fan_out
    if k != flat.size:
        raise ValueError(f"{path}: payload size does not match header")
    return MlpParams(weights, biases, ACTIVATIONS[act], bool(ln))
