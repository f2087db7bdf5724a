"""Central-difference checks of every backward pass."""

import numpy as np
import pytest

from normprop.layers import (
    BatchNormDense,
    NormPropConv,
    NormPropDense,
    PlainConv,
    PlainDense,
    Pool,
    loss_forward_backward,
)
from normprop.network import build_network
from oracles import max_relative_error, numerical_gradient

TOL = 1e-6


def check_layer(layer, x, train=False, seed=0):
    """Return the worst relative error over grad_in and every parameter gradient."""
    out = layer.forward(x, train=train)
    R = np.random.default_rng(seed).standard_normal(out.shape)

    def f():
        return float(np.sum(layer.forward(x, train=train) * R))

    layer.forward(x, train=train)
    grad_in = layer.backward(R)
    analytic = {"x": grad_in, **{k: v.copy() for k, v in layer.grads.items()}}
    errors = {"x": max_relative_error(grad_in, numerical_gradient(f, x))}
    for name, p in layer.params.items():
        errors[name] = max_relative_error(analytic[name], numerical_gradient(f, p))
    return errors


@pytest.mark.parametrize("act", ["relu", "prelu:0.2", "tanh", "identity"])
def test_normprop_dense_gradients(act):
    rng = np.random.default_rng(7)
    layer = NormPropDense(rng.standard_normal((4, 5)), rng.uniform(0.5, 1.5, 4), rng.normal(0, 0.2, 4), act)
    errors = check_layer(layer, rng.standard_normal((6, 5)))
    assert max(errors.values()) < TOL, errors


@pytest.mark.parametrize("stride,pad", [(1, 0), (2, 1)])
def test_normprop_conv_gradients(stride, pad):
    rng = np.random.default_rng(11)
    layer = NormPropConv(rng.standard_normal((3, 2, 3, 3)), rng.uniform(0.5, 1.5, 3), rng.normal(0, 0.2, 3),
                         stride=stride, pad=pad)
    errors = check_layer(layer, rng.standard_normal((2, 2, 5, 5)))
    assert max(errors.values()) < TOL, errors


def test_batchnorm_train_mode_gradients():
    rng = np.random.default_rng(3)
    layer = BatchNormDense(rng.standard_normal((4, 5)), rng.uniform(0.5, 1.5, 4), rng.normal(0, 0.2, 4))
    errors = check_layer(layer, rng.standard_normal((8, 5)), train=True)
    assert max(errors.values()) < TOL, errors


def test_batchnorm_eval_mode_gradients():
    rng = np.random.default_rng(4)
    layer = BatchNormDense(rng.standard_normal((3, 4)), activation="tanh")
    layer.forward(rng.standard_normal((10, 4)), train=True)
    errors = check_layer(layer, rng.standard_normal((5, 4)))
    assert max(errors.values()) < TOL, errors


def test_plain_and_pool_gradients():
    rng = np.random.default_rng(5)
    assert max(check_layer(PlainDense(rng.standard_normal((3, 4)), activation="tanh"),
                           rng.standard_normal((5, 4))).values()) < TOL
    assert max(check_layer(PlainConv(rng.standard_normal((2, 2, 2, 2)), stride=2, pad=1, activation="tanh"),
                           rng.standard_normal((2, 2, 4, 4))).values()) < TOL
    for mode in ("max", "avg"):
        assert max(check_layer(Pool(3, 2, 1, mode), rng.standard_normal((2, 2, 5, 5))).values()) < TOL


def test_loss_head_gradient():
    rng = np.random.default_rng(6)
    logits = rng.standard_normal((5, 4))
    labels = rng.integers(0, 4, 5)
    _, grad = loss_forward_backward(logits, labels)
    num = numerical_gradient(lambda: loss_forward_backward(logits, labels)[0], logits)
    assert max_relative_error(grad, num) < TOL


def test_whole_network_gradient():
    rng = np.random.default_rng(8)
    net = build_network("C(3,3,1,1)-P(2,2,0,max)-D(5)-D(3)", (2, 6, 6), seed=2)
    x = rng.standard_normal((4, 72))
    y = rng.integers(0, 3, 4)

    def f():
        return loss_forward_backward(net.forward(x), y)[0]

    _, grad = loss_forward_backward(net.forward(x), y)
    net.backward(grad)
    analytic = {k: v.copy() for k, v in net.gradients().items()}
    for name, p in net.parameters().items():
        assert max_relative_error(analytic[name], numerical_gradient(f, p)) < TOL, name
