"""Minimal dense numerical core: small MLPs with exact reverse-mode gradients.

Everything here operates on plain float64 numpy arrays. A "matrix" is a 2-D
row-major array; a probability distribution is a 1-D (or row-batched 2-D)
array whose entries are floored at ``PROB_EPS`` before any logarithm.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

Matrix = np.ndarray

# Floor applied to probabilities before any log. Perturbs divergences by
# at most ~1e-10 per term while keeping every log finite.
PROB_EPS = 1e-12

PARAMS_MAGIC = b"NTDH"
PARAMS_FORMAT_VERSION = 1

_ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of a fully connected network.

    ``layer_sizes`` runs input, hidden..., output; hidden layers use
    ``activation``, the output layer is linear (logits).
    """

    layer_sizes: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError(f"need at least input and output sizes, got {sizes}")
        if any(s <= 0 for s in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {_ACTIVATIONS}, got {self.activation!r}")

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    def param_count(self) -> int:
        """Total number of scalar parameters (weights + biases)."""
        sizes = self.layer_sizes
        return sum(fi * fo + fo for fi, fo in zip(sizes[:-1], sizes[1:]))


@dataclass
class MlpParams:
    """Concrete weights of an MLP; one (fan_in, fan_out) matrix + bias per layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"
    rng_seed: int | None = None

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def spec(self) -> MlpSpec:
        return MlpSpec(self.layer_sizes, self.activation)

    def copy(self) -> "MlpParams":
        return MlpParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
            self.rng_seed,
        )


@dataclass
class MlpGrads:
    """Gradients with the same per-layer shapes as ``MlpParams``."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]


def init_params(spec: MlpSpec, rng_seed: int) -> MlpParams:
    """Deterministically initialize parameters from (spec, seed).

    Weights are uniform in +/- sqrt(6 / (fan_in + fan_out)), biases zero.
    """
    rng = np.random.default_rng(rng_seed)
    weights, biases = [], []
    for fi, fo in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        limit = np.sqrt(6.0 / (fi + fo))
        weights.append(rng.uniform(-limit, limit, size=(fi, fo)))
        biases.append(np.zeros(fo))
    return MlpParams(weights, biases, spec.activation, int(rng_seed))


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Temperature softmax over the last axis, with max-subtraction.

    Returns probabilities clipped to [PROB_EPS, 1]; rows sum to 1 up to the
    clip perturbation (< C * PROB_EPS).
    """
    z = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(temperature) or temperature <= 0.0:
        raise ValueError(f"temperature must be a positive real, got {temperature}")
    if z.shape[-1] < 2:
        raise ValueError("need at least 2 classes")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    z = z / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    return np.clip(p, PROB_EPS, 1.0)


def cross_entropy(label: int, pred: np.ndarray) -> float:
    """Negative log-probability of ``label`` under ``pred`` (natural log)."""
    pred = np.asarray(pred, dtype=np.float64)
    if pred.ndim != 1:
        raise ValueError("pred must be a 1-D distribution")
    if not (0 <= label < pred.shape[0]):
        raise ValueError(f"label {label} out of range for {pred.shape[0]} classes")
    return float(-np.log(max(float(pred[label]), PROB_EPS)))


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activate_grad(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return (z > 0.0).astype(np.float64)
    t = np.tanh(z)
    return 1.0 - t * t


def _forward_cached(params: MlpParams, batch: np.ndarray):
    """Forward pass keeping pre-activations and layer inputs for backprop."""
    a = np.asarray(batch, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != params.weights[0].shape[0]:
        raise ValueError(
            f"batch of shape {a.shape} does not match input size {params.weights[0].shape[0]}"
        )
    inputs, preacts = [a], []
    n_layers = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w + b
        preacts.append(z)
        if i < n_layers - 1:
            a = _activate(z, params.activation)
            inputs.append(a)
    return preacts[-1], inputs, preacts


def forward(params: MlpParams, batch: Matrix) -> Matrix:
    """Logits (n x C) for a batch (n x d). Deterministic."""
    logits, _, _ = _forward_cached(params, batch)
    return logits


def backward(params: MlpParams, batch: Matrix, loss_grad_at_logits: Matrix) -> MlpGrads:
    """Reverse-mode gradients of sum(loss_grad_at_logits * logits) w.r.t. params."""
    _, inputs, preacts = _forward_cached(params, batch)
    g = np.asarray(loss_grad_at_logits, dtype=np.float64)
    if g.shape != preacts[-1].shape:
        raise ValueError(f"grad shape {g.shape} does not match logits {preacts[-1].shape}")
    n_layers = len(params.weights)
    grad_w = [None] * n_layers
    grad_b = [None] * n_layers
    delta = g
    for i in range(n_layers - 1, -1, -1):
        grad_w[i] = inputs[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * _activate_grad(preacts[i - 1], params.activation)
    return MlpGrads(grad_w, grad_b)


def sgd_step(
    params: MlpParams,
    grads: MlpGrads,
    lr: float,
    momentum: float = 0.0,
    weight_decay: float = 0.0,
    velocity: MlpGrads | None = None,
) -> tuple[MlpParams, MlpGrads]:
    """One SGD update with classical momentum and decoupled-style weight decay.

    Follows the standard recipe: g <- g + wd * p; v <- mu * v + g; p <- p - lr * v.
    Returns the updated params and the velocity to feed into the next step.
    """
    if not (0.0 <= momentum < 1.0):
        raise ValueError(f"momentum must be in [0, 1), got {momentum}")
    if lr < 0.0 or weight_decay < 0.0:
        raise ValueError("lr and weight_decay must be nonnegative")
    if velocity is None:
        velocity = MlpGrads(
            [np.zeros_like(w) for w in params.weights],
            [np.zeros_like(b) for b in params.biases],
        )
    new_w, new_b, vel_w, vel_b = [], [], [], []
    for w, gw, vw in zip(params.weights, grads.weights, velocity.weights):
        g = gw + weight_decay * w
        v = momentum * vw + g
        new_w.append(w - lr * v)
        vel_w.append(v)
    for b, gb, vb in zip(params.biases, grads.biases, velocity.biases):
        g = gb + weight_decay * b
        v = momentum * vb + g
        new_b.append(b - lr * v)
        vel_b.append(v)
    out = MlpParams(new_w, new_b, params.activation, params.rng_seed)
    return out, MlpGrads(vel_w, vel_b)


class SgdOptimizer:
    """Stateful convenience wrapper around :func:`sgd_step`."""

    def __init__(self, lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity: MlpGrads | None = None

    def step(self, params: MlpParams, grads: MlpGrads) -> MlpParams:
        params, self._velocity = sgd_step(
            params, grads, self.lr, self.momentum, self.weight_decay, self._velocity
        )
        return params


def save_params(params: MlpParams, path) -> None:
    """Write params to a little-endian binary file.

    Layout: magic ``NTDH`` | u32 format version | u32 layer-size count |
    u32 sizes... | per weight layer: f64 weights row-major, then f64 biases.
    """
    sizes = params.layer_sizes
    with open(path, "wb") as fh:
        fh.write(PARAMS_MAGIC)
        fh.write(struct.pack("<I", PARAMS_FORMAT_VERSION))
        fh.write(struct.pack("<I", len(sizes)))
        fh.write(struct.pack(f"<{len(sizes)}I", *sizes))
        for w, b in zip(params.weights, params.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_params(path, activation: str = "relu") -> MlpParams:
    """Read params written by :func:`save_params`.

    The file stores only shapes and raw values; the hidden activation is not
    part of the format and must be supplied by the caller.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != PARAMS_MAGIC:
        raise ValueError(f"bad magic {blob[:4]!r}, expected {PARAMS_MAGIC!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != PARAMS_FORMAT_VERSION:
        raise ValueError(f"unsupported format version {version}")
    (n_sizes,) = struct.unpack_from("<I", blob, 8)
    sizes = struct.unpack_from(f"<{n_sizes}I", blob, 12)
    off = 12 + 4 * n_sizes
    weights, biases = [], []
    for fi, fo in zip(sizes[:-1], sizes[1:]):
        w = np.frombuffer(blob, dtype="<f8", count=fi * fo, offset=off).reshape(fi, fo)
        off += 8 * fi * fo
        b = np.frombuffer(blob, dtype="<f8", count=fo, offset=off)
        off += 8 * fo
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    if off != len(blob):
        raise ValueError(f"trailing bytes: file has {len(blob)}, parsed {off}")
    return MlpParams(weights, biases, activation, None)
