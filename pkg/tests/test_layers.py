import math

import numpy as np
import pytest

from normprop import tensor
from normprop.activations import relu_stats
from normprop.exceptions import DataError, NormalizationError, StateError, UnsupportedConfigurationError
from normprop.layers import (
    BatchNormDense,
    Flatten,
    NormPropConv,
    NormPropDense,
    PlainConv,
    PlainDense,
    Pool,
    SoftmaxCrossEntropy,
    loss_forward_backward,
    softmax,
)
from oracles import naive_conv2d

C1, C2 = relu_stats().c1, relu_stats().c2


def test_normprop_dense_hand_example():
    W = np.array([[3.0, 4.0], [0.0, -2.0]])
    x = np.array([[1.0, 2.0]])
    layer = NormPropDense(W, gamma=[2.0, 1.0], beta=[0.5, 0.0])
    # row 0: 2 * 11/5 + 0.5 = 4.9; row 1: -4/2 = -2 -> relu 0
    expected = (np.array([[4.9, 0.0]]) - C2) / C1
    np.testing.assert_allclose(layer.forward(x), expected, rtol=1e-15)


def test_normprop_conv_matches_loop_oracle(rng):
    W = rng.standard_normal((3, 2, 3, 3))
    gamma, beta = rng.uniform(0.5, 1.5, 3), rng.normal(0, 0.1, 3)
    x = rng.standard_normal((2, 2, 6, 5))
    out = NormPropConv(W, gamma, beta, stride=2, pad=1).forward(x)
    norms = tensor.row_l2_norms(W)
    for n in range(2):
        u = naive_conv2d(x[n], W, 2, 1)
        z = gamma[:, None, None] * u / norms[:, None, None] + beta[:, None, None]
        np.testing.assert_allclose(out[n], (np.maximum(z, 0) - C2) / C1, rtol=1e-12, atol=1e-12)


def test_zero_row_rejected():
    with pytest.raises(NormalizationError, match="row 1"):
        NormPropDense(np.array([[1.0, 0.0], [0.0, 0.0]]))
    layer = NormPropDense(np.eye(2))
    layer.params["W"][0] = 0.0
    with pytest.raises(NormalizationError):
        layer.forward(np.ones((1, 2)))


def test_backward_before_forward():
    with pytest.raises(StateError):
        NormPropDense(np.eye(2)).backward(np.ones((1, 2)))
    with pytest.raises(StateError):
        SoftmaxCrossEntropy().backward()


def test_normprop_output_standardized_for_orthonormal_rows(rng):
    q, _ = np.linalg.qr(rng.standard_normal((20, 20)))
    out = NormPropDense(q[:8]).forward(rng.standard_normal((200_000, 20)))
    np.testing.assert_allclose(out.mean(axis=0), 0, atol=0.01)
    np.testing.assert_allclose(out.std(axis=0), 1, atol=0.01)


def test_batchnorm_train_and_eval(rng):
    W = rng.standard_normal((4, 6))
    layer = BatchNormDense(W, activation="identity")
    x = rng.normal(3.0, 2.0, (64, 6))
    out = layer.forward(x, train=True)
    np.testing.assert_allclose(out.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=0), 1 / (1 + 1e-5 / (x @ W.T).var(axis=0)), rtol=1e-12)
    # first update copies batch statistics, so eval on the same batch reproduces train mode
    np.testing.assert_allclose(layer.forward(x, train=False), out, rtol=1e-12, atol=1e-12)


def test_batchnorm_refuses_batch_of_one_and_untrained_eval():
    layer = BatchNormDense(np.eye(3))
    with pytest.raises(UnsupportedConfigurationError, match="batch size 1"):
        layer.forward(np.ones((1, 3)), train=True)
    with pytest.raises(StateError):
        layer.forward(np.ones((2, 3)), train=False)


def test_plain_layers(rng):
    W, b = rng.standard_normal((3, 4)), rng.standard_normal(3)
    x = rng.standard_normal((5, 4))
    np.testing.assert_allclose(PlainDense(W, b, "identity").forward(x), x @ W.T + b)
    F = rng.standard_normal((2, 3, 2, 2))
    xi = rng.standard_normal((1, 3, 4, 4))
    np.testing.assert_allclose(PlainConv(F, np.zeros(2), activation="identity").forward(xi)[0],
                               naive_conv2d(xi[0], F), atol=1e-12)


def test_max_pool_backward_routes_to_first_maximum():
    x = np.array([[[[1.0, 1.0], [0.0, 1.0]]]])
    pool = Pool(2, 2)
    pool.forward(x)
    np.testing.assert_array_equal(pool.backward(np.array([[[[5.0]]]])), [[[[5.0, 0.0], [0.0, 0.0]]]])


def test_avg_pool_backward_spreads_evenly():
    pool = Pool(2, 2, mode="avg")
    pool.forward(np.zeros((1, 1, 2, 2)))
    np.testing.assert_allclose(pool.backward(np.ones((1, 1, 1, 1))), np.full((1, 1, 2, 2), 0.25))


def test_flatten_round_trip(rng):
    x = rng.standard_normal((2, 3, 4, 5))
    f = Flatten()
    out = f.forward(x)
    assert out.shape == (2, 60) and f.output_shape((3, 4, 5)) == (60,)
    np.testing.assert_array_equal(f.backward(out), x)


def test_loss_values():
    logits = np.array([[0.0, 0.0], [2.0, 0.0]])
    loss, grad = loss_forward_backward(logits, np.array([0, 1]))
    expected = (math.log(2) + (2 + math.log(1 + math.exp(-2)))) / 2
    assert loss == pytest.approx(expected, rel=1e-14)
    np.testing.assert_allclose(grad.sum(axis=1), 0, atol=1e-16)
    np.testing.assert_allclose(softmax(np.array([[1000.0, 1000.0]])), [[0.5, 0.5]])


def test_loss_rejects_bad_labels():
    with pytest.raises(DataError, match="out of range"):
        loss_forward_backward(np.zeros((2, 3)), np.array([0, 3]))
    with pytest.raises(DataError):
        loss_forward_backward(np.zeros((2, 3)), np.array([0.0, 1.0]))


def test_layer_propagation_through_three_layers(rng):
    # unit-norm, low-coherence rows keep every pre-activation near N(0, 1)
    x = rng.standard_normal((100_000, 32))
    for _ in range(3):
        q, _ = np.linalg.qr(rng.standard_normal((32, 32)))
        layer = NormPropDense(q)
        pre = x @ (q / tensor.row_l2_norms(q)[:, None]).T
        np.testing.assert_allclose(pre.mean(axis=0), 0, atol=0.05)
        np.testing.assert_allclose(pre.std(axis=0), 1, atol=0.1)
        x = layer.forward(x)
