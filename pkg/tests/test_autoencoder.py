"""Unit tests for the autoencoder build/train/evaluate surface."""

import numpy as np
import pytest

from fedanom.autoencoder import (
    AutoencoderConfig,
    TrainConfig,
    build,
    decode,
    encode,
    reconstruct,
    reconstruction_errors,
    train_epochs,
)
from fedanom.errors import ConfigError, DataError, ShapeError
from fedanom.numerics import (
    Activation,
    LrSchedule,
    dense_forward,
    mse,
    pack,
    unpack,
)


def toy_config(**overrides):
    base = dict(input_dim=6, hidden_dims=(5, 4), bottleneck_dim=3,
                dropout_p=0.0, seed=13)
    base.update(overrides)
    return AutoencoderConfig(**base)


def toy_blob(n=80, dim=6, seed=0):
    rng = np.random.default_rng(seed)
    latent = rng.normal(size=(n, 2))
    mix = rng.normal(size=(2, dim))
    return np.tanh(latent @ mix + 0.05 * rng.normal(size=(n, dim)))


class TestBuild:
    def test_default_architecture_shapes(self):
        params = build(AutoencoderConfig())
        shapes = [layer.weights.shape for layer in params.layers]
        assert shapes == [(128, 66), (64, 128), (32, 64), (16, 32),
                          (32, 16), (64, 32), (128, 64), (66, 128)]
        assert len(shapes) == 8

    def test_default_packed_length(self):
        params = build(AutoencoderConfig())
        encoder = sum(l.n_params for l in params.layers[:4])
        decoder = sum(l.n_params for l in params.layers[4:])
        assert encoder == 19440
        assert decoder == 19490
        assert pack(params).size == 38930

    def test_activation_plan(self):
        params = build(AutoencoderConfig())
        acts = [l.activation for l in params.layers]
        assert acts[:-1] == [Activation.RELU] * 7
        assert acts[-1] is Activation.TANH

    def test_dropout_positions_mirrored(self):
        params = build(AutoencoderConfig())
        assert [l.dropout for l in params.layers] == [
            0.2, 0.2, 0.2, 0.0, 0.2, 0.2, 0.2, 0.0]

    def test_dropout_positions_encoder_only(self):
        params = build(AutoencoderConfig(mirror_dropout=False))
        assert [l.dropout for l in params.layers] == [
            0.2, 0.2, 0.2, 0.0, 0.0, 0.0, 0.0, 0.0]

    def test_tiny_architecture_packed_length(self):
        cfg = AutoencoderConfig(input_dim=3, hidden_dims=(2,),
                                bottleneck_dim=1, dropout_p=0.0, seed=1)
        assert pack(build(cfg)).size == 24

    def test_same_seed_identical(self):
        a = build(toy_config())
        b = build(toy_config())
        np.testing.assert_array_equal(pack(a), pack(b))

    def test_zero_dimension_rejected(self):
        with pytest.raises(ConfigError):
            AutoencoderConfig(input_dim=0)


class TestEncodeDecode:
    def test_zero_params_zero_input(self):
        cfg = toy_config()
        params = unpack(np.zeros(pack(build(cfg)).size), cfg.layer_specs())
        np.testing.assert_array_equal(encode(params, np.zeros(6)), np.zeros(3))
        np.testing.assert_array_equal(decode(params, np.zeros(3)), np.zeros(6))

    def test_default_bottleneck_width(self):
        params = build(AutoencoderConfig())
        x = np.random.default_rng(0).uniform(-1, 1, 66)
        assert encode(params, x).shape == (16,)

    def test_default_output_width(self):
        params = build(AutoencoderConfig())
        y = np.random.default_rng(0).uniform(-1, 1, 16)
        assert decode(params, y).shape == (66,)

    def test_decode_inside_tanh_range(self):
        params = build(toy_config(seed=5))
        rng = np.random.default_rng(2)
        for _ in range(5):
            out = decode(params, rng.normal(size=3) * 3)
            assert np.all(out > -1.0) and np.all(out < 1.0)

    def test_encode_deterministic(self):
        params = build(toy_config())
        x = np.random.default_rng(1).uniform(-1, 1, 6)
        np.testing.assert_array_equal(encode(params, x), encode(params, x))

    def test_shape_errors(self):
        params = build(toy_config())
        with pytest.raises(ShapeError):
            encode(params, np.zeros(7))
        with pytest.raises(ShapeError):
            decode(params, np.zeros(4))

    def test_reconstruct_matches_encode_decode(self):
        params = build(toy_config())
        x = np.random.default_rng(4).uniform(-1, 1, 6)
        np.testing.assert_allclose(reconstruct(params, x),
                                   decode(params, encode(params, x)),
                                   rtol=0, atol=0)


class TestReconstructionErrors:
    def test_row_permutation_permutes_errors(self):
        params = build(toy_config())
        data = toy_blob(20)
        perm = np.random.default_rng(7).permutation(20)
        errors = reconstruction_errors(params, data)
        np.testing.assert_array_equal(reconstruction_errors(params, data[perm]),
                                      errors[perm])

    def test_matches_per_row_mse_oracle(self):
        params = build(toy_config(seed=21))
        data = toy_blob(10, seed=3)
        errors = reconstruction_errors(params, data)
        for i, row in enumerate(data):
            out = row.copy()
            for layer in params.layers:
                out = dense_forward(out, layer)
            assert errors[i] == pytest.approx(mse(row, out), abs=1e-15)

    def test_identity_behaving_model_zero_error(self):
        # an effectively-identity single pair of layers on zero input
        cfg = AutoencoderConfig(input_dim=2, hidden_dims=(), bottleneck_dim=2,
                                dropout_p=0.0, seed=0)
        params = unpack(np.zeros(pack(build(cfg)).size), cfg.layer_specs())
        errors = reconstruction_errors(params, np.zeros((1, 2)))
        np.testing.assert_array_equal(errors, [0.0])

    def test_reconstruction_keeps_width(self):
        params = build(toy_config())
        data = toy_blob(5)
        assert reconstruct(params, data).shape == data.shape


class TestTrainEpochs:
    def test_zero_epochs_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(epochs=0)

    def test_empty_dataset_rejected(self):
        params = build(toy_config())
        with pytest.raises(DataError):
            train_epochs(params, np.zeros((0, 6)), TrainConfig(epochs=1),
                         TrainConfig(epochs=1).adam_state(pack(params).size))

    def test_loss_descends_on_blob(self):
        params = build(toy_config())
        data = toy_blob(120)
        tc = TrainConfig(epochs=50, batch_size=16,
                         schedule=LrSchedule(0.001, 1, 0.9), shuffle_seed=3)
        _, _, trace = train_epochs(params, data, tc,
                                   tc.adam_state(pack(params).size))
        assert len(trace) == 50
        assert trace[-1] < trace[0]

    def test_identical_seeds_bit_identical(self):
        data = toy_blob(60)
        tc = TrainConfig(epochs=4, batch_size=8, shuffle_seed=9)
        out = []
        for _ in range(2):
            params = build(toy_config(dropout_p=0.2))
            trained, _, trace = train_epochs(params, data, tc,
                                             tc.adam_state(pack(params).size))
            out.append((pack(trained), trace))
        np.testing.assert_array_equal(out[0][0], out[1][0])
        assert out[0][1] == out[1][1]

    def test_different_shuffle_seed_differs(self):
        data = toy_blob(60)
        params = build(toy_config(dropout_p=0.2))
        runs = []
        for seed in (1, 2):
            tc = TrainConfig(epochs=2, batch_size=8, shuffle_seed=seed)
            trained, _, _ = train_epochs(params, data, tc,
                                         tc.adam_state(pack(params).size))
            runs.append(pack(trained))
        assert not np.array_equal(runs[0], runs[1])

    def test_partial_final_batch_kept(self):
        data = toy_blob(10)
        params = build(toy_config())
        tc = TrainConfig(epochs=1, batch_size=8, shuffle_seed=0)
        trained, state, _ = train_epochs(params, data, tc,
                                         tc.adam_state(pack(params).size))
        # 10 rows with batch 8 -> 2 optimizer steps, so both batches count
        assert state.step_count == 2

    def test_dropout_zero_eval_equals_train_forward(self):
        cfg = toy_config(dropout_p=0.0)
        params = build(cfg)
        data = toy_blob(4)
        from fedanom.numerics import feed_forward
        masks = [None] * len(params.layers)
        np.testing.assert_array_equal(feed_forward(params, data, masks),
                                      feed_forward(params, data))


class TestInvariants:
    def test_output_always_in_tanh_range(self):
        params = build(toy_config(seed=17))
        rng = np.random.default_rng(11)
        out = reconstruct(params, rng.uniform(-1, 1, size=(50, 6)))
        assert np.all(out > -1.0) and np.all(out < 1.0)

    def test_shape_contract(self):
        params = build(toy_config())
        x = np.random.default_rng(1).uniform(-1, 1, 6)
        assert reconstruct(params, x).shape == x.shape
