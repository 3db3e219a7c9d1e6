"""Dense feed-forward network with hand-written forward and backward passes."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InputError, StructuralError, TrainingError

FORMAT_VERSION = 1
ACTIVATIONS = ("tanh", "identity")


@dataclass
class Layer:
    weight: np.ndarray  # (n_out, n_in)
    bias: np.ndarray  # (n_out,)
    activation: str = "tanh"

    @property
    def n_in(self) -> int:
        return self.weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]


@dataclass
class Tape:
    """Everything one forward pass leaves behind for the matching backward pass."""

    inputs: list  # input fed to each layer (after dropout for the output layer)
    outputs: list  # post-activation output of each layer
    mask: Optional[np.ndarray]  # inverted-dropout multiplier, None in infer mode
    signature: tuple
    single: bool = False  # forward was called with a 1-D input


class DenseNet:
    """Stack of affine layers with tanh/identity activations.

    Dropout (inverted convention) sits after the last hidden layer, i.e. on the
    input of the final layer, and is only active in ``train`` mode.
    """

    def __init__(self, layers, dropout=0.0, seed=0):
        if not layers:
            raise StructuralError("network needs at least one layer")
        for k, layer in enumerate(layers):
            if layer.activation not in ACTIVATIONS:
                raise StructuralError(f"layer {k}: unknown activation {layer.activation!r}")
            if layer.bias.shape != (layer.n_out,):
                raise StructuralError(f"layer {k}: bias shape {layer.bias.shape} != ({layer.n_out},)")
            if k and layers[k - 1].n_out != layer.n_in:
                raise StructuralError(
                    f"layer {k} expects {layer.n_in} inputs but layer {k - 1} yields {layers[k - 1].n_out}"
                )
        if not 0.0 <= dropout < 1.0:
            raise StructuralError(f"dropout rate must be in [0, 1), got {dropout}")
        self.layers = list(layers)
        self.dropout = float(dropout)
        self.seed = int(seed)
        self.rng = np.random.default_rng(self.seed)

    @classmethod
    def create(cls, sizes, hidden_activation="tanh", dropout=0.0, seed=0):
        """Glorot-uniform weights, zero biases, identity output layer."""
        rng = np.random.default_rng(seed)
        layers = []
        for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            limit = np.sqrt(6.0 / (n_in + n_out))
            act = "identity" if k == len(sizes) - 2 else hidden_activation
            layers.append(Layer(rng.uniform(-limit, limit, size=(n_out, n_in)), np.zeros(n_out), act))
        return cls(layers, dropout=dropout, seed=seed)

    @property
    def n_inputs(self) -> int:
        return self.layers[0].n_in

    @property
    def n_outputs(self) -> int:
        return self.layers[-1].n_out

    @property
    def signature(self) -> tuple:
        return tuple((layer.n_out, layer.n_in, layer.activation) for layer in self.layers)

    def parameters(self):
        """Flat list ``[W0, b0, W1, b1, ...]`` of the live parameter arrays."""
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def copy(self) -> "DenseNet":
        return copy.deepcopy(self)

    def forward(self, x, mode="infer"):
        if mode not in ("train", "infer"):
            raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.ndim != 2 or h.shape[1] != self.n_inputs:
            raise StructuralError(f"expected input width {self.n_inputs}, got shape {x.shape}")
        if not np.all(np.isfinite(h)):
            raise InputError("non-finite value in network input")
        inputs, outputs, mask = [], [], None
        last = len(self.layers) - 1
        for k, layer in enumerate(self.layers):
            if k == last and k > 0 and mode == "train" and self.dropout > 0.0:
                keep = 1.0 - self.dropout
                mask = (self.rng.random(h.shape) < keep) / keep
                h = h * mask
            inputs.append(h)
            z = h @ layer.weight.T + layer.bias
            h = np.tanh(z) if layer.activation == "tanh" else z
            outputs.append(h)
        tape = Tape(inputs, outputs, mask, self.signature, single)
        return (h[0] if single else h), tape

    def backward(self, tape: Tape, output_grad):
        """Gradients ``[(dW, db), ...]`` of ``sum(output_grad * output)``."""
        if tape.signature != self.signature:
            raise StructuralError("tape was recorded by a network with a different structure")
        delta = np.asarray(output_grad, dtype=np.float64)
        if tape.single:
            delta = delta[None, :]
        if delta.shape != tape.outputs[-1].shape:
            raise StructuralError(f"output gradient shape {delta.shape} != {tape.outputs[-1].shape}")
        grads = [None] * len(self.layers)
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            if layer.activation == "tanh":
                delta = delta * (1.0 - tape.outputs[k] ** 2)
            grads[k] = (delta.T @ tape.inputs[k], delta.sum(axis=0))
            if k == 0:
                break
            delta = delta @ layer.weight
            if k == len(self.layers) - 1 and tape.mask is not None:
                delta = delta * tape.mask
        return grads

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "dropout": self.dropout,
            "seed": self.seed,
            "layers": [
                {
                    "n_in": layer.n_in,
                    "n_out": layer.n_out,
                    "activation": layer.activation,
                    "weight": layer.weight.ravel().tolist(),
                    "bias": layer.bias.tolist(),
                }
                for layer in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DenseNet":
        if doc.get("format_version") != FORMAT_VERSION:
            raise StructuralError(f"unsupported model format version {doc.get('format_version')!r}")
        layers = []
        for entry in doc["layers"]:
            weight = np.asarray(entry["weight"], dtype=np.float64)
            if weight.size != entry["n_in"] * entry["n_out"]:
                raise StructuralError("weight array length does not match declared layer size")
            layers.append(Layer(weight.reshape(entry["n_out"], entry["n_in"]),
                                np.asarray(entry["bias"], dtype=np.float64), entry["activation"]))
        return cls(layers, dropout=doc["dropout"], seed=doc["seed"])


def global_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(dw * dw) + np.sum(db * db)) for dw, db in grads)))


def clip_gradients(grads, max_norm):
    """Rescale ``grads`` so their global L2 norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if max_norm is None or norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return [(dw * scale, db * scale) for dw, db in grads], norm


@dataclass
class OptimizerConfig:
    kind: str = "adam"  # "adam" or "sgd"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: Optional[float] = 10.0


@dataclass
class Optimizer:
    """Plain SGD or Adam over a :class:`DenseNet`'s parameters (updated in place)."""

    config: OptimizerConfig = field(default_factory=OptimizerConfig)
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, net: DenseNet, grads):
        flat = [g for pair in grads for g in pair]
        params = net.parameters()
        if len(flat) != len(params) or any(g.shape != p.shape for g, p in zip(flat, params)):
            raise StructuralError("gradient shapes do not match network parameters")
        bad = [i for i, g in enumerate(flat) if not np.all(np.isfinite(g))]
        if bad:
            layer = bad[0] // 2
            part = "weight" if bad[0] % 2 == 0 else "bias"
            raise TrainingError(f"non-finite gradient in layer {layer} {part}")
        cfg = self.config
        if cfg.clip_norm is not None:
            grads, _ = clip_gradients(grads, cfg.clip_norm)
            flat = [g for pair in grads for g in pair]
        lr = cfg.learning_rate
        if cfg.kind == "sgd":
            for p, g in zip(params, flat):
                p -= lr * g
        elif cfg.kind == "adam":
            if not self.m:
                self.m = [np.zeros_like(p) for p in params]
                self.v = [np.zeros_like(p) for p in params]
            self.step_count += 1
            c1 = 1.0 - cfg.beta1**self.step_count
            c2 = 1.0 - cfg.beta2**self.step_count
            for p, g, m, v in zip(params, flat, self.m, self.v):
                m *= cfg.beta1
                m += (1.0 - cfg.beta1) * g
                v *= cfg.beta2
                v += (1.0 - cfg.beta2) * g * g
                p -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        else:
            raise ValueError(f"unknown optimizer {cfg.kind!r}")
        return net


def sgd_step(net: DenseNet, grads, learning_rate: float, optimizer: Optional[Optimizer] = None):
    """One update; plain SGD unless an (adaptive) ``optimizer`` is supplied."""
    if optimizer is None:
        optimizer = Optimizer(OptimizerConfig(kind="sgd", learning_rate=learning_rate, clip_norm=None))
    else:
        optimizer.config.learning_rate = learning_rate
    return optimizer.step(net, grads)
