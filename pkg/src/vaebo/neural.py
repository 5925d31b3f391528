"""Dense feedforward layers with hand-written reverse-mode gradients and Adam.

Everything is float64. Inputs to :func:`forward` may be a single vector or a
batch of row vectors; gradients from :func:`backward` are summed over the
batch, so the caller folds any ``1/batch`` factor into ``output_gradient``.

Checkpoints are ``.npz`` archives: one array per parameter plus a
``__meta__`` JSON string and a ``__version__`` integer (see README).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

ACTIVATIONS = ("linear", "relu", "tanh")
CHECKPOINT_FORMAT = "vaebo-checkpoint"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class StaleTapeError(RuntimeError):
    """A tape was replayed against a network it was not recorded on."""


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass(eq=False)
class DenseLayer:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)
    activation: str = "linear"
    version: int = field(default=0, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ShapeError(f"inconsistent layer shapes {self.weights.shape} / {self.biases.shape}")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.biases))):
            raise ValueError("layer parameters must be finite")

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]


def init_layer(n_in: int, n_out: int, activation: str, rng: np.random.Generator) -> DenseLayer:
    """Scaled-uniform weights, zero biases."""
    limit = np.sqrt(6.0 / (n_in + n_out))
    w = rng.uniform(-limit, limit, size=(n_out, n_in))
    return DenseLayer(w, np.zeros(n_out), activation)


def init_network(sizes: Sequence[int], activations: Sequence[str],
                 rng: np.random.Generator) -> list[DenseLayer]:
    if len(activations) != len(sizes) - 1:
        raise ValueError("need one activation per layer")
    return [init_layer(a, b, act, rng) for a, b, act in zip(sizes[:-1], sizes[1:], activations)]


def parameters(network: Sequence[DenseLayer]) -> list[np.ndarray]:
    """Parameter arrays in canonical order ``[W0, b0, W1, b1, ...]``."""
    out = []
    for layer in network:
        out += [layer.weights, layer.biases]
    return out


@dataclass
class Tape:
    inputs: list
    outputs: list
    stamp: tuple


def _stamp(network):
    return tuple((id(layer), layer.version, layer.weights.shape) for layer in network)


def forward(network: Sequence[DenseLayer], x):
    """Evaluate ``network`` on ``x``; returns ``(output, tape)``."""
    a = np.asarray(x, dtype=np.float64)
    inputs, outputs = [], []
    for i, layer in enumerate(network):
        if a.shape[-1] != layer.n_in:
            raise ShapeError(f"layer {i} expects {layer.n_in} inputs, got {a.shape[-1]}")
        inputs.append(a)
        pre = a @ layer.weights.T + layer.biases
        if layer.activation == "relu":
            a = np.maximum(pre, 0.0)
        elif layer.activation == "tanh":
            a = np.tanh(pre)
        else:
            a = pre
        outputs.append(a)
    return a, Tape(inputs, outputs, _stamp(network))


@dataclass
class ParamGradients:
    weights: list
    biases: list
    input: np.ndarray  # gradient w.r.t. the network input

    def arrays(self) -> list[np.ndarray]:
        out = []
        for gw, gb in zip(self.weights, self.biases):
            out += [gw, gb]
        return out


def backward(network: Sequence[DenseLayer], tape: Tape, output_gradient) -> ParamGradients:
    """Reverse pass: gradients of the scalar whose output-gradient is given."""
    if tape.stamp != _stamp(network):
        raise StaleTapeError("tape does not belong to this network state; rerun forward")
    g = np.asarray(output_gradient, dtype=np.float64)
    if g.shape != tape.outputs[-1].shape:
        raise ShapeError(f"output gradient shape {g.shape} != output shape {tape.outputs[-1].shape}")
    gws, gbs = [None] * len(network), [None] * len(network)
    for i in range(len(network) - 1, -1, -1):
        layer, out, inp = network[i], tape.outputs[i], tape.inputs[i]
        if layer.activation == "relu":
            g = g * (out > 0.0)
        elif layer.activation == "tanh":
            g = g * (1.0 - out * out)
        if g.ndim == 1:
            gws[i] = np.outer(g, inp)
            gbs[i] = g.copy()
        else:
            gws[i] = g.T @ inp
            gbs[i] = g.sum(axis=0)
        g = g @ layer.weights
    return ParamGradients(gws, gbs, g)


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def create(cls, params: Sequence[np.ndarray], learning_rate: float = 1e-3,
               beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params],
                   0, learning_rate, beta1, beta2, epsilon)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and optimizer state differ in length")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or p.shape != state.m[i].shape:
            raise ShapeError(f"parameter {i}: shape {p.shape} vs gradient {np.shape(g)}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for parameter {i} at step {state.step + 1}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params, state


def step_network(network: Sequence[DenseLayer], grads: ParamGradients, state: AdamState) -> None:
    """Adam-update a network in place and invalidate its outstanding tapes."""
    adam_step(parameters(network), grads.arrays(), state)
    for layer in network:
        layer.version += 1


# -- checkpoints ------------------------------------------------------------

def network_arrays(network: Sequence[DenseLayer], prefix: str) -> tuple[dict, list]:
    arrays, acts = {}, []
    for i, layer in enumerate(network):
        arrays[f"{prefix}{i}.weights"] = layer.weights
        arrays[f"{prefix}{i}.biases"] = layer.biases
        acts.append(layer.activation)
    return arrays, acts


def network_from_arrays(arrays: dict, prefix: str, activations: Sequence[str]) -> list[DenseLayer]:
    return [DenseLayer(arrays[f"{prefix}{i}.weights"].copy(), arrays[f"{prefix}{i}.biases"].copy(), act)
            for i, act in enumerate(activations)]


def save_checkpoint(path, arrays: dict, meta: dict) -> None:
    payload = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}
    payload["__format__"] = np.array(CHECKPOINT_FORMAT)
    payload["__version__"] = np.array(CHECKPOINT_VERSION, dtype=np.int64)
    payload["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path) -> tuple[dict, dict]:
    with np.load(Path(path), allow_pickle=False) as data:
        if "__format__" not in data or str(data["__format__"]) != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
        version = int(data["__version__"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        meta = json.loads(str(data["__meta__"]))
        arrays = {k: data[k] for k in data.files if not k.startswith("__")}
    return arrays, meta


def save_network(path, network: Sequence[DenseLayer]) -> None:
    arrays, acts = network_arrays(network, "layer")
    save_checkpoint(path, arrays, {"kind": "network", "activations": acts})


def load_network(path) -> list[DenseLayer]:
    arrays, meta = load_checkpoint(path)
    return network_from_arrays(arrays, "layer", meta["activations"])
