"""Small feed-forward networks with hand-written backprop and Adam.

Weights are stored as ``(fan_in, fan_out)`` matrices so a batch ``X`` of shape
``(n, fan_in)`` maps to ``X @ W + b``. Parameters are enumerated layer by layer,
weight matrix (row-major) first, then bias.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

ACTIVATIONS = ("identity", "relu")
HEADS = ("softmax", "sigmoid")
NET_FORMAT = "haiteam-densenet-v1"


@dataclass
class DenseNet:
    """Layers are views into one flat parameter buffer (``flat``)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: tuple[str, ...] = ()
    head: str = "softmax"
    flat: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        if len(self.activations) != len(self.weights) - 1:
            raise ValueError(
                f"expected {len(self.weights) - 1} hidden activations, got {len(self.activations)}"
            )
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ValueError(f"layer {i}: weight {W.shape} and bias {b.shape} do not match")
            if i and self.weights[i - 1].shape[1] != W.shape[0]:
                raise ValueError(
                    f"layer {i} expects {W.shape[0]} inputs but layer {i - 1} emits "
                    f"{self.weights[i - 1].shape[1]}"
                )
        self.flat = np.concatenate([np.asarray(a, dtype=float).ravel() for W, b in zip(self.weights, self.biases) for a in (W, b)])
        pos = 0
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = self.flat[pos:pos + W.size].reshape(W.shape)
            pos += W.size
            self.biases[i] = self.flat[pos:pos + b.size]
            pos += b.size

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def n_params(self) -> int:
        return self.flat.size

    def params(self) -> np.ndarray:
        return self.flat.copy()

    def set_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {flat.shape}")
        self.flat[...] = flat

    def copy(self) -> "DenseNet":
        return DenseNet(
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            tuple(self.activations),
            self.head,
        )

    def __call__(self, x):
        return forward(self, x)


@dataclass
class Gradient:
    """Partial derivatives laid out like the owning network's parameters."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def zeros_like(cls, net: DenseNet) -> "Gradient":
        return cls([np.zeros_like(W) for W in net.weights], [np.zeros_like(b) for b in net.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for W, b in zip(self.weights, self.biases) for a in (W, b)])

    def scaled(self, c: float) -> "Gradient":
        return Gradient([c * W for W in self.weights], [c * b for b in self.biases])

    def __add__(self, other: "Gradient") -> "Gradient":
        return Gradient(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in (*self.weights, *self.biases))


@dataclass
class ForwardTrace:
    """Intermediate values of one forward pass, consumed by :func:`backward`."""

    inputs: list[np.ndarray]  # input to each layer
    pre: list[np.ndarray]  # affine output of each layer
    output: np.ndarray
    squeeze: bool = False


@dataclass
class AdamState:
    """Moment accumulators in the network's flat parameter order."""

    m: np.ndarray
    v: np.ndarray
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def for_net(cls, net: DenseNet, lr: float = 1e-3, **kw) -> "AdamState":
        return cls(np.zeros(net.n_params), np.zeros(net.n_params), lr=lr, **kw)


def init_net(
    in_dim: int,
    out_dim: int,
    hidden: int = 8,
    n_hidden: int = 2,
    activation: str = "identity",
    head: str = "softmax",
    rng: np.random.Generator | int | None = None,
) -> DenseNet:
    """Glorot-uniform weights, zero biases.

    ``n_hidden=2`` gives the three weight layers used throughout; ``n_hidden=0``
    is a single affine map (a hyperplane model).
    """
    if in_dim < 1 or out_dim < 1 or hidden < 1 or n_hidden < 0:
        raise ValueError("dimensions must be positive")
    rng = np.random.default_rng(rng)
    dims = [in_dim] + [hidden] * n_hidden + [out_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return DenseNet(weights, biases, (activation,) * n_hidden, head)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _as_batch(net: DenseNet, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ValueError(f"input has shape {x.shape[-1:] if x.ndim else ()}, network expects {net.in_dim} features")
    return x, squeeze


def trace(net: DenseNet, x) -> ForwardTrace:
    x, squeeze = _as_batch(net, x)
    inputs, pre = [], []
    h = x
    last = len(net.weights) - 1
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        z = h @ W + b
        pre.append(z)
        if i < last:
            h = np.maximum(z, 0.0) if net.activations[i] == "relu" else z
    out = softmax(pre[-1]) if net.head == "softmax" else sigmoid(pre[-1])
    return ForwardTrace(inputs, pre, out, squeeze)


def forward(net: DenseNet, x) -> np.ndarray:
    """Head output for one feature vector or a batch of them."""
    t = trace(net, x)
    return t.output[0] if t.squeeze else t.output


def logits(net: DenseNet, x) -> np.ndarray:
    t = trace(net, x)
    return t.pre[-1][0] if t.squeeze else t.pre[-1]


def backward_from_logits(net: DenseNet, dlogits: np.ndarray, tr: ForwardTrace) -> Gradient:
    """Backpropagate partials taken with respect to the final affine output."""
    delta = np.atleast_2d(np.asarray(dlogits, dtype=float))
    gw: list[np.ndarray] = [None] * len(net.weights)  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * len(net.weights)  # type: ignore[list-item]
    for i in range(len(net.weights) - 1, -1, -1):
        gw[i] = tr.inputs[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i:
            delta = delta @ net.weights[i].T
            if net.activations[i - 1] == "relu":
                delta = delta * (tr.pre[i - 1] > 0)
    return Gradient(gw, gb)


def backward(net: DenseNet, upstream, tr: ForwardTrace | None) -> Gradient:
    """Gradient of a scalar objective given its partials w.r.t. the head output.

    ``upstream`` has the same shape as the forward output; per-sample
    contributions are summed.
    """
    if tr is None:
        raise RuntimeError("backward needs the trace of a forward pass; call trace(net, x) first")
    u = np.atleast_2d(np.asarray(upstream, dtype=float))
    p = tr.output
    if u.shape != p.shape:
        raise ValueError(f"upstream shape {u.shape} does not match output shape {p.shape}")
    if net.head == "softmax":
        dz = p * (u - (u * p).sum(axis=1, keepdims=True))
    else:
        dz = u * p * (1.0 - p)
    return backward_from_logits(net, dz, tr)


def adam_step(net: DenseNet, state: AdamState, g: Gradient) -> tuple[DenseNet, AdamState]:
    """One bias-corrected Adam descent step, applied in place."""
    gf = g.flat()
    if gf.shape != net.flat.shape or state.m.shape != net.flat.shape:
        raise ValueError("gradient does not match network parameters")
    if not np.isfinite(gf).all():
        raise FloatingPointError("gradient contains non-finite entries")
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * gf
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * gf * gf
    net.flat -= state.lr * (state.m / c1) / (np.sqrt(state.v / c2) + state.eps)
    return net, state


def finite_diff_check(
    net: DenseNet,
    objective: Callable[[DenseNet], tuple[float, Gradient]],
    step: float = 1e-5,
) -> float:
    """Max relative gap between the analytic gradient and central differences.

    ``objective(net)`` returns ``(value, gradient)``; only the value is used for
    the numeric side.
    """
    _, g = objective(net)
    analytic = g.flat()
    base = net.params()
    numeric = np.empty_like(base)
    work = net.copy()
    for k in range(base.size):
        theta = base.copy()
        theta[k] += step
        work.set_params(theta)
        up = objective(work)[0]
        theta[k] -= 2 * step
        work.set_params(theta)
        down = objective(work)[0]
        numeric[k] = (up - down) / (2 * step)
    return float(np.max(np.abs(analytic - numeric) / (np.abs(numeric) + 1e-8)))


def save_net(net: DenseNet, path) -> None:
    """Write ``net`` as an ``.npz`` with a JSON shape header and a flat parameter array."""
    np.savez(Path(path), **net_to_arrays(net))


def net_to_arrays(net: DenseNet, prefix: str = "") -> dict[str, np.ndarray]:
    header = {
        "format": NET_FORMAT,
        "shapes": [list(W.shape) for W in net.weights],
        "activations": list(net.activations),
        "head": net.head,
    }
    return {prefix + "header": np.array(json.dumps(header)), prefix + "params": net.params()}


def net_from_arrays(arrays, prefix: str = "") -> DenseNet:
    header = json.loads(str(arrays[prefix + "header"]))
    if header.get("format") != NET_FORMAT:
        raise ValueError(f"unsupported network format {header.get('format')!r}")
    shapes: Sequence[Sequence[int]] = header["shapes"]
    net = DenseNet(
        [np.zeros(s) for s in shapes],
        [np.zeros(s[1]) for s in shapes],
        tuple(header["activations"]),
        header["head"],
    )
    net.set_params(np.asarray(arrays[prefix + "params"]))
    return net


def load_net(path) -> DenseNet:
    with np.load(Path(path)) as f:
        return net_from_arrays(f)
