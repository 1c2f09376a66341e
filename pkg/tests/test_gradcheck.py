"""Finite-difference verification of every layer kind's backward pass."""

import numpy as np
import pytest

from mibench import builder
from mibench.net import (Activation, BatchNorm2d, Conv2d, Dense, Dropout,
                         Flatten, Pool2d, gradcheck_layer, gradcheck_model)


def rng(seed):
    return np.random.default_rng(seed)


def test_dense_linear_is_machine_exact():
    layer = Dense(4, 3, dtype=np.float64, rng=rng(0))
    report = gradcheck_layer(layer, rng(1).standard_normal((5, 4)))
    assert report.max_rel_error < 1e-6


def test_conv_plain():
    layer = Conv2d(2, 4, (3, 3), padding=(1, 1), dtype=np.float64, rng=rng(0))
    report = gradcheck_layer(layer, rng(1).standard_normal((2, 2, 5, 6)))
    assert report.max_rel_error < 1e-6  # linear map: exact up to roundoff


def test_conv_grouped_depthwise():
    layer = Conv2d(8, 16, (3, 3), groups=8, dtype=np.float64, rng=rng(2))
    report = gradcheck_layer(layer, rng(3).standard_normal((2, 8, 6, 7)))
    assert report.max_rel_error < 1e-4


def test_conv_stride_padding_groups():
    layer = Conv2d(4, 6, (2, 3), stride=(2, 2), padding=(1, 2), groups=2,
                   dtype=np.float64, rng=rng(4))
    report = gradcheck_layer(layer, rng(5).standard_normal((3, 4, 5, 8)))
    assert report.max_rel_error < 1e-6


def test_batchnorm_train_mode():
    layer = BatchNorm2d(3, dtype=np.float64)
    layer.gamma.data[...] = rng(6).uniform(0.5, 1.5, 3)
    layer.beta.data[...] = rng(7).standard_normal(3)
    report = gradcheck_layer(layer, rng(8).standard_normal((4, 3, 3, 5)))
    assert report.max_rel_error < 1e-4


def test_batchnorm_eval_mode():
    layer = BatchNorm2d(3, dtype=np.float64)
    layer.forward(rng(9).standard_normal((4, 3, 3, 5)), train=True)
    report = gradcheck_layer(layer, rng(10).standard_normal((2, 3, 3, 5)),
                             train=False)
    assert report.max_rel_error < 1e-6


def test_elu():
    report = gradcheck_layer(Activation(3), rng(11).standard_normal((4, 16)))
    assert report.max_rel_error < 1e-4


def test_log_softmax():
    report = gradcheck_layer(Activation(9), rng(12).standard_normal((6, 4)))
    assert report.max_rel_error < 1e-4


def test_pool_average():
    report = gradcheck_layer(Pool2d(1, (2, 3)),
                             rng(13).standard_normal((2, 3, 4, 9)))
    assert report.max_rel_error < 1e-6


def test_pool_max():
    # values spaced > 2*step so the finite difference never flips an argmax
    vals = np.linspace(-3.0, 3.0, 144)
    rng(14).shuffle(vals)
    report = gradcheck_layer(Pool2d(0, (2, 2)), vals.reshape(2, 3, 4, 6))
    assert report.max_rel_error < 1e-6


def test_dropout_frozen_mask():
    report = gradcheck_layer(Dropout(0.4), rng(15).standard_normal((5, 8)))
    assert report.max_rel_error < 1e-6


def test_flatten():
    report = gradcheck_layer(Flatten(), rng(16).standard_normal((2, 3, 4)))
    assert report.max_rel_error < 1e-6


def test_composite_model_with_every_kind():
    spec = builder.ModelSpec(
        h=5, w=12, layers_cnn=2,
        kernel_list=[(2, 3), (2, 2)], filters_list=[(2, 4), (4, 6)],
        stride_list=[(1, 2), (1, 1)], padding_list=[(1, 1), (0, 0)],
        pooling_list=[[0, (1, 2)], [1, (1, 2)]], groups_list=[2, 2],
        cnn_normalization_list=[True, True], layers_ff=1, neurons_list=[3],
        activation_list=[3, 3, 9], bias_list=[True, False, True],
        dropout_list=[-1, 0.4, -1])
    model, _ = builder.build_model(spec, seed=5, dtype=np.float64)
    x = rng(17).standard_normal((3, 2, 5, 12))
    report = gradcheck_model(model, x, np.array([0, 2, 1]), step=1e-4)
    assert report.max_rel_error < 1e-4


def test_report_names_every_tensor():
    layer = Dense(3, 2, dtype=np.float64, rng=rng(18))
    report = gradcheck_layer(layer, rng(19).standard_normal((4, 3)))
    assert set(report.per_tensor) == {"weight", "bias", "input"}
    assert report.max_rel_error == max(report.per_tensor.values())
