"""Build, train and evaluate the dense autoencoder.

The default architecture is 66 -> 128 -> 64 -> 32 -> 16 -> 32 -> 64 -> 128
-> 66 with ReLU hidden activations, a Tanh output head and dropout 0.2
after each hidden layer. Inputs are expected pre-scaled to [-1, 1] so the
Tanh head can actually reach them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, DivergenceError
from .numerics import (
    Activation,
    AdamState,
    LayerSpec,
    LrSchedule,
    ParameterSet,
    adam_step,
    derive_rng,
    feed_forward,
    glorot_init,
    loss_and_gradients,
    lr_at,
    make_dropout_mask,
    pack,
    unpack,
)


@dataclass(frozen=True)
class AutoencoderConfig:
    """Mirror-symmetric encoder/decoder stack.

    `mirror_dropout` also applies dropout at the decoder positions that
    mirror the encoder hidden layers; turn it off to restrict dropout to
    the encoder side only.
    """

    input_dim: int = 66
    hidden_dims: tuple[int, ...] = (128, 64, 32)
    bottleneck_dim: int = 16
    dropout_p: float = 0.2
    seed: int = 0
    mirror_dropout: bool = True

    def __post_init__(self):
        dims = (self.input_dim, *self.hidden_dims, self.bottleneck_dim)
        if any(int(d) < 1 for d in dims):
            raise ConfigError(f"all layer dims must be >= 1, got {dims}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(
                f"dropout probability must be in [0, 1), got {self.dropout_p}")
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))

    def layer_specs(self) -> tuple[LayerSpec, ...]:
        """Encoder then decoder specs; decoder mirrors the encoder."""
        enc_dims = (self.input_dim, *self.hidden_dims, self.bottleneck_dim)
        dec_dims = tuple(reversed(enc_dims))
        specs = []
        # encoder: hidden layers carry dropout, the bottleneck does not
        for i in range(len(enc_dims) - 1):
            is_bottleneck = i == len(enc_dims) - 2
            specs.append(LayerSpec(
                out_dim=enc_dims[i + 1],
                in_dim=enc_dims[i],
                activation=Activation.RELU,
                dropout=0.0 if is_bottleneck else self.dropout_p,
            ))
        # decoder: mirror positions optionally carry dropout, output is Tanh
        for i in range(len(dec_dims) - 1):
            is_output = i == len(dec_dims) - 2
            p = self.dropout_p if (self.mirror_dropout and not is_output) else 0.0
            specs.append(LayerSpec(
                out_dim=dec_dims[i + 1],
                in_dim=dec_dims[i],
                activation=Activation.TANH if is_output else Activation.RELU,
                dropout=p,
            ))
        return tuple(specs)

    @property
    def n_encoder_layers(self) -> int:
        return len(self.hidden_dims) + 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 32
    schedule: LrSchedule = LrSchedule(0.001, 1, 0.9)
    shuffle_seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")

    def adam_state(self, n_params: int) -> AdamState:
        return AdamState.zeros(n_params, self.adam_beta1, self.adam_beta2,
                               self.adam_epsilon)


def build(config: AutoencoderConfig) -> ParameterSet:
    """Initialize the autoencoder parameters; deterministic per seed."""
    return glorot_init(config.layer_specs(), config.seed)


def _split_point(params: ParameterSet) -> int:
    n = len(params.layers)
    if n % 2 != 0:
        raise ConfigError(
            f"expected a mirror architecture with an even layer count, got {n}")
    return n // 2


def encode(params: ParameterSet, x: np.ndarray) -> np.ndarray:
    """Map input(s) to the bottleneck representation; dropout disabled."""
    half = _split_point(params)
    encoder = ParameterSet(params.layers[:half])
    return feed_forward(encoder, x)


def decode(params: ParameterSet, y: np.ndarray) -> np.ndarray:
    """Map bottleneck vector(s) back to feature space; dropout disabled."""
    half = _split_point(params)
    decoder = ParameterSet(params.layers[half:])
    return feed_forward(decoder, y)


def reconstruct(params: ParameterSet, x: np.ndarray) -> np.ndarray:
    """Full encode/decode pass in eval mode."""
    return feed_forward(params, x)


def reconstruction_errors(params: ParameterSet, data: np.ndarray) -> np.ndarray:
    """Per-sample MSE between each row and its reconstruction."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data[None, :]
    out = feed_forward(params, data)
    diff = data - out
    return np.mean(diff * diff, axis=1)


def _batch_masks(specs, batch_size: int, rng: np.random.Generator):
    """Fresh dropout masks for one training batch (None where p = 0)."""
    masks = []
    for s in specs:
        if s.dropout > 0.0:
            masks.append(make_dropout_mask((batch_size, s.out_dim), s.dropout, rng))
        else:
            masks.append(None)
    return masks


def train_epochs(params: ParameterSet, data: np.ndarray, tc: TrainConfig,
                 state: AdamState
                 ) -> tuple[ParameterSet, AdamState, list[float]]:
    """Mini-batch Adam training for `tc.epochs` epochs.

    Each epoch shuffles rows with the seeded stream, draws fresh dropout
    masks per batch, and records the mean training loss over its batches.
    Fully deterministic given (params, data, tc).
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data[None, :]
    if data.shape[0] == 0:
        raise DataError("cannot train on an empty dataset")
    rng = derive_rng(tc.shuffle_seed)
    specs = params.specs()
    flat = pack(params)
    current = params
    trace: list[float] = []
    n = data.shape[0]
    for epoch in range(tc.epochs):
        order = rng.permutation(n)
        rate = lr_at(tc.schedule, epoch)
        batch_losses = []
        for start in range(0, n, tc.batch_size):
            idx = order[start:start + tc.batch_size]
            batch = data[idx]
            masks = _batch_masks(specs, len(idx), rng)
            loss, grad = loss_and_gradients(current, batch, masks)
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite training loss {loss} at epoch {epoch}, "
                    f"batch {start // tc.batch_size}",
                    epoch=epoch, batch=start // tc.batch_size)
            flat, state = adam_step(flat, grad, state, rate)
            current = unpack(flat, specs)
            batch_losses.append(loss)
        trace.append(float(np.mean(batch_losses)))
    return current, state, trace
