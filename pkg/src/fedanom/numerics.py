"""Dense neural-network math for the MLP autoencoder.

Everything operates on float64 numpy arrays: layers, activations, inverted
dropout, MSE loss, reverse-mode gradients, the Adam optimizer and a
step-decay learning-rate schedule. Model parameters round-trip between a
structured `ParameterSet` and a flat vector so aggregation code can treat a
model as a single array.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, DataError, NumericError, ShapeError


class Activation(str, Enum):
    RELU = "relu"
    TANH = "tanh"
    IDENTITY = "identity"


class LayerSpec(NamedTuple):
    """Shape and metadata of one dense layer, enough to rebuild it."""

    out_dim: int
    in_dim: int
    activation: Activation
    dropout: float = 0.0


def _as_f64(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float64)


def derive_seed(*parts: int) -> int:
    """Fold integer components into one reproducible 64-bit seed.

    Uses numpy's SeedSequence hashing, so the result is stable across
    platforms and runs. Distinct component tuples give independent streams;
    the length prefix keeps tuples injective even though SeedSequence
    ignores trailing zero entropy.
    """
    entropy = [len(parts)] + [int(p) & 0x7FFF_FFFF_FFFF_FFFF for p in parts]
    ss = np.random.SeedSequence(entropy)
    return int(ss.generate_state(1, np.uint64)[0])


def derive_rng(*parts: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))


@dataclass
class DenseLayer:
    """One dense map: activation(weights @ x + bias).

    `dropout` is the probability applied to this layer's *output* during
    training (0 disables it); it travels with the layer so training code
    needs no separate architecture description.
    """

    weights: np.ndarray
    bias: np.ndarray
    activation: Activation = Activation.IDENTITY
    dropout: float = 0.0

    def __post_init__(self):
        self.weights = _as_f64(self.weights)
        self.bias = _as_f64(self.bias)
        if self.weights.ndim != 2:
            raise ShapeError(
                f"layer weights must be 2-d, got {self.weights.ndim}-d")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"bias length {self.bias.shape} does not match "
                f"out size {self.weights.shape[0]}")
        self.activation = Activation(self.activation)
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(
                f"dropout probability must be in [0, 1), got {self.dropout}")

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def n_params(self) -> int:
        return self.weights.size + self.bias.size

    def spec(self) -> LayerSpec:
        return LayerSpec(self.out_dim, self.in_dim, self.activation,
                         self.dropout)


@dataclass
class ParameterSet:
    """Ordered dense layers forming one model."""

    layers: list[DenseLayer] = field(default_factory=list)

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ShapeError(
                    f"layer chain broken: out size {prev.out_dim} feeds "
                    f"in size {nxt.in_dim}")

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def specs(self) -> tuple[LayerSpec, ...]:
        return tuple(layer.spec() for layer in self.layers)


def activate(kind: Activation, x: np.ndarray) -> np.ndarray:
    """Elementwise activation: ReLU, Tanh or identity pass-through."""
    x = _as_f64(x)
    kind = Activation(kind)
    if kind is Activation.RELU:
        return np.maximum(x, 0.0)
    if kind is Activation.TANH:
        return np.tanh(x)
    return x.copy()


def _activation_grad(kind: Activation, z: np.ndarray) -> np.ndarray:
    if kind is Activation.RELU:
        return (z > 0.0).astype(np.float64)
    if kind is Activation.TANH:
        t = np.tanh(z)
        return 1.0 - t * t
    return np.ones_like(z)


def dense_forward(x: np.ndarray, layer: DenseLayer) -> np.ndarray:
    """activation(W @ x + b). Accepts a vector or a (batch, in) matrix."""
    x = _as_f64(x)
    if x.shape[-1] != layer.in_dim:
        raise ShapeError(
            f"input width {x.shape[-1]} does not match layer in size "
            f"{layer.in_dim}")
    return activate(layer.activation, x @ layer.weights.T + layer.bias)


def dropout(x: np.ndarray, p: float, rng: np.random.Generator,
            training: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Inverted dropout. Returns (output, mask) so a backward pass can
    replay the exact mask; mask entries are 0 or 1/(1-p), all ones in eval
    mode or at p = 0."""
    if p >= 1.0 or p < 0.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    x = _as_f64(x)
    if not training:
        return x.copy(), np.ones_like(x)
    mask = make_dropout_mask(x.shape, p, rng)
    return x * mask, mask


def make_dropout_mask(shape, p: float,
                      rng: np.random.Generator) -> np.ndarray:
    """Sample a {0, 1/(1-p)} mask with keep probability 1-p."""
    if p >= 1.0 or p < 0.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    keep = rng.random(shape) >= p
    return keep.astype(np.float64) / (1.0 - p)


def mse(x: np.ndarray, z: np.ndarray) -> float:
    """Mean squared error over the feature dimension."""
    x = _as_f64(x)
    z = _as_f64(z)
    if x.shape != z.shape:
        raise ShapeError(f"mse inputs differ in shape: {x.shape} vs {z.shape}")
    d = x - z
    return float(np.mean(d * d))


def feed_forward(params: ParameterSet, x: np.ndarray,
                 masks: Sequence[np.ndarray | None] | None = None
                 ) -> np.ndarray:
    """Run the full layer chain. `masks` replays dropout (training mode);
    None runs eval mode (no dropout)."""
    out, _, _ = _forward_cached(params, x, masks)
    return out


def _forward_cached(params: ParameterSet, x: np.ndarray,
                    masks: Sequence[np.ndarray | None] | None = None):
    """Forward pass keeping per-layer pre-activations and inputs for the
    backward pass."""
    a = _as_f64(x)
    if a.shape[-1] != params.input_dim:
        raise ShapeError(
            f"input width {a.shape[-1]} does not match model input "
            f"{params.input_dim}")
    if masks is not None and len(masks) != len(params.layers):
        raise ShapeError(
            f"got {len(masks)} dropout masks for {len(params.layers)} layers")
    inputs = []    # post-dropout input fed to each layer
    preacts = []   # z = W @ a + b per layer
    for i, layer in enumerate(params.layers):
        inputs.append(a)
        z = a @ layer.weights.T + layer.bias
        preacts.append(z)
        a = activate(layer.activation, z)
        if masks is not None and masks[i] is not None:
            a = a * masks[i]
    return a, inputs, preacts


def loss_and_gradients(params: ParameterSet, batch: np.ndarray,
                       masks: Sequence[np.ndarray | None] | None = None
                       ) -> tuple[float, np.ndarray]:
    """Mean reconstruction MSE of a batch and its gradient w.r.t. the
    packed parameters (reverse-mode through the autoencoder graph)."""
    batch = _as_f64(batch)
    if batch.ndim == 1:
        batch = batch[None, :]
    if batch.shape[0] == 0:
        raise DataError("cannot compute gradients on an empty batch")
    out, inputs, preacts = _forward_cached(params, batch, masks)
    diff = out - batch
    loss = float(np.mean(diff * diff))
    n_total = diff.size
    # d(loss)/d(post-dropout output of final layer)
    d_h = (2.0 / n_total) * diff
    grads_w = [None] * len(params.layers)
    grads_b = [None] * len(params.layers)
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        d_a = d_h
        if masks is not None and masks[i] is not None:
            d_a = d_h * masks[i]
        d_z = d_a * _activation_grad(layer.activation, preacts[i])
        grads_w[i] = d_z.T @ inputs[i]
        grads_b[i] = d_z.sum(axis=0)
        d_h = d_z @ layer.weights
    flat = np.concatenate(
        [np.concatenate([w.ravel(), b]) for w, b in zip(grads_w, grads_b)]
    ) if params.layers else np.zeros(0)
    return loss, flat


def compute_gradients(params: ParameterSet, batch: np.ndarray,
                      masks: Sequence[np.ndarray | None] | None = None
                      ) -> np.ndarray:
    """Gradient of the mean batch reconstruction MSE, packed flat."""
    _, grad = loss_and_gradients(params, batch, masks)
    return grad


@dataclass
class AdamState:
    """Adam moment estimates plus the step counter."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        self.first_moment = _as_f64(self.first_moment)
        self.second_moment = _as_f64(self.second_moment)
        if self.first_moment.shape != self.second_moment.shape:
            raise ShapeError("Adam moment vectors differ in shape")
        if self.step_count < 0:
            raise ConfigError("Adam step count cannot be negative")

    @classmethod
    def zeros(cls, n: int, beta1: float = 0.9, beta2: float = 0.999,
              epsilon: float = 1e-8) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, beta1, beta2, epsilon)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState,
              rate: float) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update on a flat parameter vector.

    Pure: returns fresh arrays and a fresh state with the step counter
    advanced by one.
    """
    params = _as_f64(params)
    grads = _as_f64(grads)
    if params.shape != grads.shape or params.shape != state.first_moment.shape:
        raise ShapeError(
            f"adam_step size mismatch: params {params.shape}, grads "
            f"{grads.shape}, moments {state.first_moment.shape}")
    if rate <= 0.0:
        raise ConfigError(f"learning rate must be positive, got {rate}")
    bad = ~np.isfinite(grads)
    if bad.any():
        coord = int(np.flatnonzero(bad)[0])
        raise NumericError(
            f"non-finite gradient at coordinate {coord}: {grads[coord]}")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = AdamState(m, v, t, state.beta1, state.beta2, state.epsilon)
    return new_params, new_state


@dataclass(frozen=True)
class LrSchedule:
    """Step-decay schedule: rate(e) = base * gamma ** floor(e / step)."""

    base_rate: float = 0.001
    step_size: int = 1
    gamma: float = 0.9

    def __post_init__(self):
        if self.base_rate <= 0.0:
            raise ConfigError(f"base rate must be positive, got {self.base_rate}")
        if self.step_size < 1:
            raise ConfigError(f"step size must be >= 1, got {self.step_size}")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ConfigError(f"epoch must be nonnegative, got {epoch}")
    return schedule.base_rate * schedule.gamma ** (epoch // schedule.step_size)


def pack(params: ParameterSet) -> np.ndarray:
    """Flatten all layers: per layer, row-major weights then bias."""
    if not params.layers:
        return np.zeros(0)
    return np.concatenate(
        [np.concatenate([layer.weights.ravel(), layer.bias])
         for layer in params.layers])


def unpack(flat: np.ndarray, specs: Sequence[LayerSpec]) -> ParameterSet:
    """Rebuild a ParameterSet from a flat vector and layer specs."""
    flat = _as_f64(flat)
    expected = sum(s.out_dim * s.in_dim + s.out_dim for s in specs)
    if flat.shape != (expected,):
        raise ShapeError(
            f"flat vector has length {flat.shape}, specs require {expected}")
    layers = []
    pos = 0
    for s in specs:
        n_w = s.out_dim * s.in_dim
        w = flat[pos:pos + n_w].reshape(s.out_dim, s.in_dim)
        pos += n_w
        b = flat[pos:pos + s.out_dim]
        pos += s.out_dim
        layers.append(DenseLayer(w.copy(), b.copy(), s.activation, s.dropout))
    return ParameterSet(layers)


def glorot_init(specs: Sequence[LayerSpec], seed: int) -> ParameterSet:
    """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases."""
    rng = derive_rng(seed)
    layers = []
    for s in specs:
        limit = math.sqrt(6.0 / (s.in_dim + s.out_dim))
        w = rng.uniform(-limit, limit, size=(s.out_dim, s.in_dim))
        layers.append(DenseLayer(w, np.zeros(s.out_dim), s.activation,
                                 s.dropout))
    return ParameterSet(layers)
