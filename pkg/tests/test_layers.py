"""Layer kernels: shape algebra, analytic values, and backward plumbing."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mibench.errors import BuildError, NumericError, SpecError
from mibench.net import (Activation, Adam, BatchNorm2d, Conv2d, Dense,
                         Dropout, Flatten, Pool2d, nll_loss, nll_loss_grad)
from mibench.net.layers import Param


def rng(seed=0):
    return np.random.default_rng(seed)


class TestConv2d:
    def test_temporal_conv_output_shape(self):
        conv = Conv2d(1, 8, (1, 32), padding=(0, 4), rng=rng())
        x = rng(1).standard_normal((1, 1, 22, 512)).astype(np.float32)
        assert conv.forward(x).shape == (1, 8, 22, 489)

    def test_identity_one_by_one(self):
        conv = Conv2d(3, 3, (1, 1), groups=3, bias=False, rng=rng())
        conv.weight.data[...] = 1.0
        x = rng(2).standard_normal((2, 3, 4, 5)).astype(np.float32)
        np.testing.assert_array_equal(conv.forward(x), x)

    def test_spatial_conv_collapses_height(self):
        conv = Conv2d(8, 16, (22, 1), groups=8, bias=False, rng=rng())
        x = rng(3).standard_normal((1, 8, 22, 489)).astype(np.float32)
        assert conv.forward(x).shape == (1, 16, 1, 489)

    def test_depthwise_channel_isolation(self):
        # with groups == Cin, output channel c sees only channel c // (Cout/Cin)
        conv = Conv2d(4, 8, (2, 3), groups=4, bias=False, dtype=np.float64,
                      rng=rng(4))
        x = rng(5).standard_normal((2, 4, 6, 9))
        base = conv.forward(x)
        for perturbed_ch in range(4):
            x2 = x.copy()
            x2[:, perturbed_ch] += rng(6).standard_normal((2, 6, 9))
            out = conv.forward(x2)
            for out_ch in range(8):
                same = np.array_equal(out[:, out_ch], base[:, out_ch])
                assert same == (out_ch // 2 != perturbed_ch)

    def test_stride_and_padding_formula(self):
        conv = Conv2d(1, 1, (3, 2), stride=(2, 3), padding=(1, 2), rng=rng())
        assert conv.output_shape((1, 1, 7, 11)) == (1, 1, 4, 5)

    def test_groups_must_divide_channels(self):
        with pytest.raises(BuildError):
            Conv2d(6, 8, (1, 1), groups=4, rng=rng())

    def test_kernel_larger_than_padded_input(self):
        conv = Conv2d(1, 1, (5, 5), rng=rng())
        with pytest.raises(BuildError):
            conv.output_shape((1, 1, 3, 10))

    @given(st.integers(1, 12), st.integers(1, 5), st.integers(0, 3),
           st.integers(1, 3))
    def test_width_formula_matches_enumeration(self, size, k, pad, stride):
        # brute force: count window placements that fit the padded extent
        padded = size + 2 * pad
        placements = len(range(0, padded - k + 1, stride)) if padded >= k else 0
        formula = (padded - k) // stride + 1 if padded >= k else 0
        assert formula == placements


class TestBatchNorm2d:
    def test_constant_input_maps_to_zero(self):
        bn = BatchNorm2d(3, dtype=np.float64)
        x = np.full((2, 3, 4, 4), 7.0)
        out = bn.forward(x, train=True)
        np.testing.assert_allclose(out, 0.0, atol=1e-6)

    def test_normalizes_first_two_moments(self):
        bn = BatchNorm2d(2, dtype=np.float64)
        x = 3.0 + 2.0 * rng(1).standard_normal((4, 2, 8, 8))
        out = bn.forward(x, train=True)
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-5)
        np.testing.assert_allclose(out.std(axis=(0, 2, 3)), 1.0, atol=1e-5)

    def test_affine_parameters_scale_and_shift(self):
        bn = BatchNorm2d(2, dtype=np.float64)
        bn.gamma.data[...] = 2.0
        bn.beta.data[...] = 1.0
        x = rng(2).standard_normal((4, 2, 8, 8))
        out = bn.forward(x, train=True)
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 1.0, atol=1e-5)
        np.testing.assert_allclose(out.std(axis=(0, 2, 3)), 2.0, atol=1e-4)

    def test_eval_mode_uses_running_statistics(self):
        bn = BatchNorm2d(1, dtype=np.float64)
        x = rng(3).standard_normal((8, 1, 2, 2))
        bn.forward(x, train=True)
        single = x[:1]
        out = bn.forward(single, train=False)
        expected = (single - bn.running_mean) / np.sqrt(bn.running_var + bn.eps)
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_train_mode_needs_two_values(self):
        bn = BatchNorm2d(1)
        with pytest.raises(BuildError):
            bn.forward(np.ones((1, 1, 1, 1)), train=True)


class TestActivation:
    def test_elu_negative_analytic_value(self):
        act = Activation(3)
        out = act.forward(np.array([[-1.0]]))
        assert out[0, 0] == pytest.approx(math.expm1(-1.0), abs=1e-12)

    def test_elu_identity_for_non_negative(self):
        act = Activation(3)
        x = np.linspace(0, 5, 11)[None]
        np.testing.assert_array_equal(act.forward(x), x)

    def test_log_softmax_uniform(self):
        act = Activation(9)
        out = act.forward(np.zeros((1, 4)))
        np.testing.assert_allclose(out, -math.log(4.0), atol=1e-12)

    def test_log_softmax_rows_normalize(self):
        act = Activation(9)
        out = act.forward(rng(1).standard_normal((5, 4)))
        np.testing.assert_allclose(np.exp(out).sum(axis=-1), 1.0, atol=1e-12)

    def test_identity_code(self):
        act = Activation(-1)
        x = rng(2).standard_normal((3, 3))
        assert act.forward(x) is x

    def test_unknown_code_rejected(self):
        with pytest.raises(SpecError):
            Activation(7)


class TestPool2d:
    def test_average_pool_width(self):
        pool = Pool2d(1, (1, 4))
        x = rng(1).standard_normal((1, 16, 1, 489)).astype(np.float32)
        assert pool.forward(x).shape == (1, 16, 1, 122)

    def test_average_of_row(self):
        pool = Pool2d(1, (1, 4))
        out = pool.forward(np.array([[[[1.0, 2.0, 3.0, 4.0]]]]))
        assert out[0, 0, 0, 0] == pytest.approx(2.5)

    def test_max_of_row(self):
        pool = Pool2d(0, (1, 4))
        out = pool.forward(np.array([[[[1.0, 2.0, 3.0, 4.0]]]]))
        assert out[0, 0, 0, 0] == pytest.approx(4.0)

    def test_remainder_discarded(self):
        pool = Pool2d(1, (1, 2))
        out = pool.forward(np.array([[[[1.0, 3.0, 100.0]]]]))
        assert out.shape == (1, 1, 1, 1)
        assert out[0, 0, 0, 0] == pytest.approx(2.0)

    def test_kernel_larger_than_input(self):
        pool = Pool2d(1, (1, 8))
        with pytest.raises(BuildError):
            pool.output_shape((1, 1, 1, 4))

    def test_unknown_code_rejected(self):
        with pytest.raises(SpecError):
            Pool2d(5, (1, 2))


class TestDropout:
    def test_eval_mode_is_identity(self):
        drop = Dropout(0.7)
        x = rng(1).standard_normal((4, 4))
        assert drop.forward(x, train=False) is x

    def test_p_zero_is_identity_in_train(self):
        drop = Dropout(0.0)
        x = rng(2).standard_normal((4, 4))
        assert drop.forward(x, train=True, rng=rng(3)) is x

    def test_half_dropout_zeroes_half(self):
        drop = Dropout(0.5)
        x = np.ones((1000, 1000))
        out = drop.forward(x, train=True, rng=rng(11))
        frac = float(np.mean(out == 0.0))
        assert 0.498 <= frac <= 0.502
        survivors = out[out != 0.0]
        np.testing.assert_allclose(survivors, 2.0, atol=1e-12)

    def test_probability_range(self):
        with pytest.raises(SpecError):
            Dropout(1.0)
        with pytest.raises(SpecError):
            Dropout(-0.1)


class TestDense:
    def test_identity_weights(self):
        dense = Dense(3, 3, bias=False, dtype=np.float64, rng=rng(1))
        dense.weight.data[...] = np.eye(3)
        x = rng(2).standard_normal((5, 3))
        np.testing.assert_allclose(dense.forward(x), x, atol=1e-12)

    def test_hand_arithmetic(self):
        dense = Dense(2, 2, dtype=np.float64, rng=rng(1))
        dense.weight.data[...] = np.eye(2)
        dense.bias.data[...] = 1.0
        out = dense.forward(np.array([[1.0, 2.0]]))
        np.testing.assert_allclose(out, [[2.0, 3.0]], atol=1e-12)

    def test_feature_mismatch(self):
        dense = Dense(240, 4, rng=rng(1))
        assert dense.weight.data.shape == (240, 4)
        with pytest.raises(BuildError):
            dense.forward(np.zeros((1, 100), dtype=np.float32))


class TestFlatten:
    def test_round_trip(self):
        flat = Flatten()
        x = rng(1).standard_normal((3, 2, 4, 5))
        y = flat.forward(x)
        assert y.shape == (3, 40)
        np.testing.assert_array_equal(flat.backward(y), x)


class TestNllLoss:
    def test_uniform_rows(self):
        logprobs = np.full((3, 4), -math.log(4.0))
        assert nll_loss(logprobs, [0, 1, 3]) == pytest.approx(math.log(4.0))

    def test_perfect_prediction(self):
        logprobs = np.full((2, 4), -50.0)
        logprobs[0, 1] = 0.0
        logprobs[1, 2] = 0.0
        assert nll_loss(logprobs, [1, 2]) == pytest.approx(0.0)

    def test_mean_over_batch(self):
        logprobs = np.array([[-1.0, -9.0], [-9.0, -3.0]])
        assert nll_loss(logprobs, [0, 1]) == pytest.approx(2.0)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            nll_loss(np.zeros((2, 4)), [0, 4])

    def test_gradient_structure(self):
        logprobs = rng(1).standard_normal((3, 4))
        _, grad = nll_loss_grad(logprobs, [2, 0, 1])
        expected = np.zeros((3, 4))
        expected[[0, 1, 2], [2, 0, 1]] = -1.0 / 3.0
        np.testing.assert_allclose(grad, expected, atol=1e-15)


class TestAdam:
    def test_first_step_is_signed_learning_rate(self):
        p = Param("w", np.array([0.5, -0.25]))
        p.grad[...] = [0.37, -1.2]
        opt = Adam([("w", p)])
        opt.step()
        np.testing.assert_allclose(p.data, [0.5 - 1e-3, -0.25 + 1e-3],
                                   atol=1e-8)

    def test_zero_gradient_never_moves(self):
        p = Param("w", np.array([1.0, 2.0]))
        opt = Adam([("w", p)])
        for _ in range(25):
            opt.step()
        np.testing.assert_array_equal(p.data, [1.0, 2.0])

    def test_quadratic_descent(self):
        # two steps on f(x) = x^2 from x = 1: x must strictly decrease
        p = Param("x", np.array([1.0]))
        opt = Adam([("x", p)])
        seen = [float(p.data[0])]
        for _ in range(2):
            p.grad[...] = 2.0 * p.data
            opt.step()
            seen.append(float(p.data[0]))
        assert seen[0] > seen[1] > seen[2]

    def test_nan_gradient_aborts(self):
        p = Param("w", np.array([1.0]))
        p.grad[...] = np.nan
        opt = Adam([("w", p)])
        with pytest.raises(NumericError):
            opt.step()
