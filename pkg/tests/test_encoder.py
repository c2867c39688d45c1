"""Encoder forward/backward, EMA updates, and parameter serialization."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from quadmatch.encoder import (
    EncoderParams,
    backward,
    ema_update,
    forward,
    init_params,
    load_params,
    save_params,
)
from quadmatch.selftest import draw_encoder_instance


class TestInitParams:
    def test_layer_shapes(self):
        p = init_params([7, 16, 16, 4], seed=0)
        assert p.layer_dims == (7, 16, 16, 4)
        assert [w.shape for w in p.weights] == [(7, 16), (16, 16), (16, 4)]
        assert [b.shape for b in p.biases] == [(16,), (16,), (4,)]

    def test_biases_start_at_zero(self):
        p = init_params([3, 5, 2], seed=1)
        for b in p.biases:
            assert np.all(b == 0.0)

    def test_weight_scale_follows_fan_in(self):
        p = init_params([100, 50, 10], seed=2)
        assert np.abs(p.weights[0]).max() <= 1.0 / np.sqrt(100)
        assert np.abs(p.weights[1]).max() <= 1.0 / np.sqrt(50)

    def test_deterministic_per_seed(self):
        a = init_params([4, 8, 3], seed=9)
        b = init_params([4, 8, 3], seed=9)
        c = init_params([4, 8, 3], seed=10)
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa, wb)
        assert any(not np.array_equal(wa, wc)
                   for wa, wc in zip(a.weights, c.weights))

    def test_rejects_degenerate_dims(self):
        with pytest.raises(ValueError):
            init_params([5], seed=0)
        with pytest.raises(ValueError):
            init_params([5, 0, 3], seed=0)

    def test_rejects_unknown_activation(self):
        with pytest.raises(ValueError):
            init_params([3, 3], seed=0, activation="sigmoid")


class TestEncoderParamsContainer:
    def test_rejects_mismatched_chain(self):
        w1, w2 = np.zeros((3, 4)), np.zeros((5, 2))
        with pytest.raises(ValueError):
            EncoderParams((w1, w2), (np.zeros(4), np.zeros(2)))

    def test_rejects_bias_shape_mismatch(self):
        with pytest.raises(ValueError):
            EncoderParams((np.zeros((3, 4)),), (np.zeros(3),))

    def test_arrays_are_read_only(self):
        p = init_params([3, 4, 2], seed=0)
        with pytest.raises(ValueError):
            p.weights[0][0, 0] = 1.0


class TestForward:
    def test_output_rows_unit_norm(self, rng):
        p = init_params([6, 12, 5], seed=3)
        out, _ = forward(p, rng.normal(size=(9, 6)))
        assert out.shape == (9, 5)
        assert_allclose(np.linalg.norm(out, axis=1), np.ones(9), atol=1e-12)

    def test_rows_processed_independently(self, rng):
        # Embedding a stacked batch equals embedding rows one at a time.
        p = init_params([5, 8, 4], seed=4)
        x = rng.normal(size=(6, 5))
        full, _ = forward(p, x)
        for i in range(6):
            single, _ = forward(p, x[i : i + 1])
            assert_allclose(single[0], full[i], atol=1e-14)

    def test_single_linear_layer_is_normalized_affine_map(self, rng):
        p = init_params([4, 3], seed=5)
        x = rng.normal(size=(7, 4))
        out, _ = forward(p, x)
        z = x @ p.weights[0] + p.biases[0]
        expected = z / np.linalg.norm(z, axis=1, keepdims=True)
        assert_allclose(out, expected, atol=1e-14)

    def test_tanh_activation_path(self, rng):
        p = init_params([4, 6, 3], seed=6, activation="tanh")
        x = rng.normal(size=(5, 4))
        out, _ = forward(p, x)
        h = np.tanh(x @ p.weights[0] + p.biases[0])
        z = h @ p.weights[1] + p.biases[1]
        expected = z / np.linalg.norm(z, axis=1, keepdims=True)
        assert_allclose(out, expected, atol=1e-14)

    def test_input_dim_mismatch_rejected(self, rng):
        p = init_params([4, 3], seed=0)
        with pytest.raises(ValueError):
            forward(p, rng.normal(size=(2, 5)))

    def test_zero_collapse_rejected(self):
        # A weight matrix of zeros maps everything to the zero vector,
        # which has no direction to normalize.
        p = EncoderParams((np.zeros((3, 2)),), (np.zeros(2),))
        with pytest.raises(ValueError):
            forward(p, np.ones((1, 3)))


class TestBackward:
    @pytest.mark.parametrize("activation", ["ramp", "tanh"])
    def test_matches_finite_differences(self, rng, activation):
        h = 1e-6
        for _ in range(4):
            params, x = draw_encoder_instance(rng, (5, 7, 4), n_rows=4,
                                              activation=activation)
            probe = rng.normal(size=(4, 4))

            def scalar(p):
                out, _ = forward(p, x)
                return float(np.sum(probe * out))

            def probe_at(k, idx, delta):
                ws = [np.array(wi) for wi in params.weights]
                ws[k][idx] += delta
                return scalar(EncoderParams(tuple(ws), params.biases,
                                            params.activation))

            _, cache = forward(params, x)
            grads = backward(cache, probe)
            for k in range(len(params.weights)):
                w = params.weights[k]
                numeric = np.zeros_like(w)
                for idx in np.ndindex(*w.shape):
                    numeric[idx] = (probe_at(k, idx, h) - probe_at(k, idx, -h)) / (2 * h)
                scale = max(1e-8, np.abs(grads.weights[k]).max(), np.abs(numeric).max())
                assert np.abs(grads.weights[k] - numeric).max() / scale < 1e-5

    def test_bias_grads_match_finite_differences(self, rng):
        h = 1e-6
        params, x = draw_encoder_instance(rng, (4, 6, 3), n_rows=3)
        probe = rng.normal(size=(3, 3))
        _, cache = forward(params, x)
        grads = backward(cache, probe)
        for k in range(len(params.biases)):
            b = params.biases[k]
            numeric = np.zeros_like(b)
            for i in range(b.size):
                vals = []
                for sign in (h, -h):
                    bs = [np.array(bi) for bi in params.biases]
                    bs[k] = bs[k].copy()
                    bs[k][i] += sign
                    shifted = EncoderParams(params.weights, tuple(bs),
                                            params.activation)
                    out, _ = forward(shifted, x)
                    vals.append(float(np.sum(probe * out)))
                numeric[i] = (vals[0] - vals[1]) / (2.0 * h)
            scale = max(1e-8, np.abs(grads.biases[k]).max(), np.abs(numeric).max())
            assert np.abs(grads.biases[k] - numeric).max() / scale < 1e-5

    def test_radial_gradient_component_is_projected_out(self, rng):
        # Scaling the gradient along the output direction must not leak
        # into the parameters: unit-norm outputs cannot grow radially.
        params, x = draw_encoder_instance(rng, (4, 5, 3), n_rows=2)
        out, cache = forward(params, x)
        grads = backward(cache, out)  # purely radial probe
        for g in grads.weights + grads.biases:
            assert np.abs(g).max() < 1e-12

    def test_grad_shape_mismatch_rejected(self, rng):
        params, x = draw_encoder_instance(rng, (4, 5, 3), n_rows=2)
        _, cache = forward(params, x)
        with pytest.raises(ValueError):
            backward(cache, np.zeros((3, 3)))


class TestEmaUpdate:
    def test_matches_blend_formula(self):
        teacher = init_params([3, 5, 2], seed=0)
        student = init_params([3, 5, 2], seed=1)
        t = 0.995
        out = ema_update(teacher, student, t)
        for ow, tw, sw in zip(out.weights, teacher.weights, student.weights):
            assert_allclose(ow, t * tw + (1.0 - t) * sw, atol=0.0)
        for ob, tb, sb in zip(out.biases, teacher.biases, student.biases):
            assert_allclose(ob, t * tb + (1.0 - t) * sb, atol=0.0)

    def test_endpoints(self):
        teacher = init_params([3, 4, 2], seed=0)
        student = init_params([3, 4, 2], seed=1)
        frozen = ema_update(teacher, student, 1.0)
        for fw, tw in zip(frozen.weights, teacher.weights):
            assert np.array_equal(fw, tw)
        copied = ema_update(teacher, student, 0.0)
        for cw, sw in zip(copied.weights, student.weights):
            assert np.array_equal(cw, sw)

    def test_geometric_decay_toward_fixed_student(self):
        teacher = init_params([4, 6, 3], seed=2)
        student = init_params([4, 6, 3], seed=3)
        t = 0.9

        def gap(p):
            return np.sqrt(sum(np.sum((pw - sw) ** 2)
                               for pw, sw in zip(p.weights, student.weights)))

        g0 = gap(teacher)
        cur = teacher
        for k in range(1, 30):
            cur = ema_update(cur, student, t)
            assert abs(gap(cur) - t**k * g0) / (t**k * g0) < 1e-12

    def test_inputs_unmodified(self):
        teacher = init_params([3, 4, 2], seed=0)
        student = init_params([3, 4, 2], seed=1)
        tw0 = [w.copy() for w in teacher.weights]
        sw0 = [w.copy() for w in student.weights]
        ema_update(teacher, student, 0.5)
        for w, w0 in zip(teacher.weights, tw0):
            assert np.array_equal(w, w0)
        for w, w0 in zip(student.weights, sw0):
            assert np.array_equal(w, w0)

    def test_validation(self):
        teacher = init_params([3, 4, 2], seed=0)
        student = init_params([3, 5, 2], seed=1)
        with pytest.raises(ValueError):
            ema_update(teacher, teacher, 1.5)
        with pytest.raises(ValueError):
            ema_update(teacher, student, 0.5)
        tanh = init_params([3, 4, 2], seed=0, activation="tanh")
        with pytest.raises(ValueError):
            ema_update(teacher, tanh, 0.5)


class TestSerialization:
    def test_round_trip_is_bit_exact(self, tmp_path, rng):
        p = init_params([5, 9, 4], seed=11, activation="tanh")
        path = tmp_path / "enc.json"
        save_params(p, path)
        q = load_params(path)
        assert q.activation == "tanh"
        assert q.layer_dims == p.layer_dims
        for pw, qw in zip(p.weights, q.weights):
            assert np.array_equal(pw, qw)
        for pb, qb in zip(p.biases, q.biases):
            assert np.array_equal(pb, qb)

    def test_saved_twice_is_byte_identical(self, tmp_path):
        p = init_params([4, 6, 2], seed=5)
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        save_params(p, a)
        save_params(p, b)
        assert a.read_bytes() == b.read_bytes()
