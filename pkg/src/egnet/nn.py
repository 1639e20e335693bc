"""Multilayer perceptrons and set aggregators with hand-written reverse mode.

Every learned update function of a block is an :class:`Mlp`.  Forward passes
accept one input vector or a batch of row vectors and return a trace that
:func:`mlp_backward` consumes.

Arithmetic is arranged so that each output row depends only on its own input
row, in a fixed floating point order: the affine map accumulates one input
column at a time instead of calling BLAS.  This is what makes permutation
equivariance bitwise, and lets a weight column of zeros drop out of a sum
without perturbing the remaining terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Sequence

import numpy as np

from .errors import DimensionError, ValidationError
from .rng import SeedLike, as_generator

ACTIVATIONS = ("tanh", "relu", "identity")
CKPT_VERSION = "egn-ckpt-1"


@dataclass(eq=False)
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str
    grad_weight: np.ndarray = field(init=False)
    grad_bias: np.ndarray = field(init=False)

    def __post_init__(self):
        self.weight = np.array(self.weight, dtype=np.float64)
        self.bias = np.array(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(
                f"layer weight {self.weight.shape} and bias {self.bias.shape} do not match"
            )
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)

    @property
    def n_in(self) -> int:
        return self.weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]


@dataclass(eq=False)
class Mlp:
    layers: list

    def __post_init__(self):
        if not self.layers:
            raise ValidationError("an Mlp needs at least one layer")
        for k, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.n_out != b.n_in:
                raise DimensionError(f"layer {k} outputs {a.n_out} values, layer {k + 1} expects {b.n_in}")

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    @property
    def sizes(self) -> list:
        return [self.n_in] + [layer.n_out for layer in self.layers]

    def parameters(self) -> Iterator[tuple]:
        """Yield ``(param, grad)`` array pairs in a fixed order."""
        for layer in self.layers:
            yield layer.weight, layer.grad_weight
            yield layer.bias, layer.grad_bias

    def zero_grad(self) -> None:
        for _, g in self.parameters():
            g[...] = 0.0

    def copy(self) -> "Mlp":
        return Mlp([Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def to_dict(self) -> dict:
        return {
            "version": CKPT_VERSION,
            "layer_sizes": self.sizes,
            "activations": [l.activation for l in self.layers],
            "weights": [l.weight.tolist() for l in self.layers],
            "biases": [l.bias.tolist() for l in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        if d.get("version") != CKPT_VERSION:
            raise ValidationError(f"unsupported Mlp checkpoint version {d.get('version')!r}")
        layers = [
            Layer(np.array(w, dtype=np.float64).reshape(o, i), b, a)
            for w, b, a, i, o in zip(
                d["weights"], d["biases"], d["activations"], d["layer_sizes"], d["layer_sizes"][1:]
            )
        ]
        m = cls(layers)
        if m.sizes != list(d["layer_sizes"]):
            raise DimensionError("checkpoint layer sizes disagree with weight shapes")
        return m


def mlp_init(layer_sizes: Sequence[int], activation: str = "tanh", seed: SeedLike = 0) -> Mlp:
    """Glorot-uniform weights, zero biases, linear output layer."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ValidationError(f"layer sizes must be >= 2 positive integers, got {list(layer_sizes)}")
    if activation not in ACTIVATIONS:
        raise ValidationError(f"unknown activation {activation!r}")
    rng = as_generator(seed)
    layers = []
    for k, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        s = np.sqrt(6.0 / (fan_in + fan_out))
        act = "identity" if k == len(sizes) - 2 else activation
        layers.append(Layer(rng.uniform(-s, s, size=(fan_out, fan_in)), np.zeros(fan_out), act))
    return Mlp(layers)


def zero_mlp(layer_sizes: Sequence[int], activation: str = "tanh") -> Mlp:
    m = mlp_init(layer_sizes, activation, 0)
    for layer in m.layers:
        layer.weight[...] = 0.0
    return m


def _affine(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Column-by-column accumulation; see module docstring.
    acc = np.zeros((x.shape[0], w.shape[0]))
    for k in range(w.shape[1]):
        acc += x[:, k : k + 1] * w[:, k]
    return acc + b


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def _activation_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return 1.0 - a * a
    if kind == "relu":
        return (z > 0).astype(np.float64)
    return np.ones_like(z)


@dataclass
class MlpTrace:
    batched: bool
    inputs: list  # input to each layer, (B, n_in)
    pre: list  # pre-activation of each layer
    post: list  # activation output of each layer


def mlp_forward(m: Mlp, x) -> tuple:
    """Return ``(output, trace)``; ``x`` is ``(n_in,)`` or ``(B, n_in)``."""
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    h = x if batched else x.reshape(1, -1)
    if h.ndim != 2 or h.shape[1] != m.n_in:
        raise DimensionError(f"Mlp expects inputs of length {m.n_in}, got shape {x.shape}")
    trace = MlpTrace(batched, [], [], [])
    for layer in m.layers:
        trace.inputs.append(h)
        z = _affine(h, layer.weight, layer.bias)
        h = _activate(z, layer.activation)
        trace.pre.append(z)
        trace.post.append(h)
    return (h if batched else h[0]), trace


def mlp_backward(m: Mlp, trace: MlpTrace, upstream) -> np.ndarray:
    """Gradient of ``upstream · output`` w.r.t. the input.

    Parameter gradients are added into the layers' ``grad_*`` accumulators.
    """
    g = np.asarray(upstream, dtype=np.float64)
    g = g if trace.batched else g.reshape(1, -1)
    if len(trace.pre) != len(m.layers) or g.shape != trace.post[-1].shape:
        raise DimensionError(
            f"upstream shape {np.shape(upstream)} does not match forward output {trace.post[-1].shape}"
        )
    for layer, h, z, a in zip(reversed(m.layers), reversed(trace.inputs), reversed(trace.pre), reversed(trace.post)):
        gz = g * _activation_grad(z, a, layer.activation)
        layer.grad_weight += gz.T @ h
        layer.grad_bias += gz.sum(axis=0)
        g = gz @ layer.weight
    return g if trace.batched else g[0]


class Aggregator(str, Enum):
    SUM = "sum"
    MEAN = "mean"
    MAX = "max"


def as_aggregator(kind) -> Aggregator:
    try:
        return Aggregator(kind)
    except ValueError:
        raise ValidationError(f"unknown aggregator {kind!r}; expected sum, mean or max") from None


def _rows(rows, dim) -> np.ndarray:
    r = np.asarray(rows, dtype=np.float64)
    if r.size == 0:
        if dim is None and r.ndim != 2:
            raise DimensionError("row length must be given for an empty set")
        return r.reshape(0, r.shape[1] if r.ndim == 2 else dim)
    if r.ndim != 2:
        raise DimensionError(f"rows must be a (k, d) array, got shape {r.shape}")
    if dim is not None and r.shape[1] != dim:
        raise DimensionError(f"rows have length {r.shape[1]}, expected {dim}")
    return r


def aggregate(kind, rows, dim: int | None = None) -> np.ndarray:
    """Reduce a ``(k, d)`` set of rows to one ``d``-vector.

    Sums run over each column in sorted order, so the result is bitwise
    independent of row order.  All kinds return zeros for an empty set.
    """
    kind = as_aggregator(kind)
    r = _rows(rows, dim)
    k, d = r.shape
    if k == 0:
        return np.zeros(d)
    if kind is Aggregator.MAX:
        return r.max(axis=0)
    total = np.sort(r, axis=0).sum(axis=0)
    return total / k if kind is Aggregator.MEAN else total


def aggregate_backward(kind, rows, upstream) -> np.ndarray:
    """Per-row gradients of ``upstream · aggregate(kind, rows)``.

    For max, each component routes to its first maximal row.
    """
    kind = as_aggregator(kind)
    g = np.asarray(upstream, dtype=np.float64)
    r = _rows(rows, g.shape[0])
    k, d = r.shape
    if k == 0:
        return np.zeros((0, d))
    if kind is Aggregator.SUM:
        return np.broadcast_to(g, (k, d)).copy()
    if kind is Aggregator.MEAN:
        return np.broadcast_to(g / k, (k, d)).copy()
    out = np.zeros((k, d))
    out[np.argmax(r, axis=0), np.arange(d)] = g
    return out
