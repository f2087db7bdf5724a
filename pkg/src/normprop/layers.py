"""Forward/backward layers.

Each layer keeps its trainable arrays in ``params`` and, after ``backward``,
the matching gradients in ``grads``. ``forward`` caches whatever ``backward``
needs; calling ``backward`` first raises :class:`StateError`.

Dense inputs are (batch, features); convolutional inputs are
(batch, channels, height, width).
"""

import numpy as np

from . import tensor
from .activations import get_activation, stats_for
from .data import RunningStats
from .exceptions import DataError, DimensionError, NormalizationError, StateError, UnsupportedConfigurationError

EPS_NORM = 1e-12
BN_EPS = 1e-5


def check_row_norms(W, what="weight"):
    norms = tensor.row_l2_norms(W)
    bad = np.flatnonzero(~(norms > EPS_NORM))
    if bad.size:
        raise NormalizationError(f"{what} row {int(bad[0])} has norm {norms[bad[0]]:.3g} <= {EPS_NORM}")
    return norms


class Layer:
    """Base class; parameter-free by default."""

    l2_constraint = False
    normalization = "none"

    def __init__(self):
        self.params = {}
        self.grads = {}
        self._cache = None

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, grad_out):
        raise NotImplementedError

    def _cached(self):
        if self._cache is None:
            raise StateError(f"{type(self).__name__}.backward called before forward")
        return self._cache

    def output_shape(self, input_shape):
        return input_shape

    def __repr__(self):
        shapes = ", ".join(f"{k}={v.shape}" for k, v in self.params.items())
        return f"{type(self).__name__}({shapes})"


class _NormPropMixin:
    """Shared NormProp algebra over a (rows, m) projection ``x W^T``.

    out = (act(gamma * proj / ||W_i|| + beta) - c2) / c1
    """

    normalization = "normprop"
    l2_constraint = True

    def _setup(self, W, gamma, beta, activation):
        Layer.__init__(self)
        W = np.array(W, dtype=np.float64)
        m = W.shape[0]
        gamma = np.ones(m) if gamma is None else np.array(gamma, dtype=np.float64).reshape(m)
        beta = np.zeros(m) if beta is None else np.array(beta, dtype=np.float64).reshape(m)
        check_row_norms(W)
        self.params = {"W": W, "gamma": gamma, "beta": beta}
        self.activation = get_activation(activation)
        self.stats = stats_for(self.activation)

    def _forward_rows(self, proj):
        W, gamma, beta = self.params["W"], self.params["gamma"], self.params["beta"]
        norms = check_row_norms(W)
        s = proj / norms
        z = gamma * s + beta
        out = (self.activation(z) - self.stats.c2) / self.stats.c1
        return out, (s, z, norms)

    def _backward_rows(self, grad, rows_in, s, z, norms):
        W, gamma = self.params["W"], self.params["gamma"]
        dz = grad * self.activation.derivative(z) / self.stats.c1
        self.grads["gamma"] = np.sum(dz * s, axis=0)
        self.grads["beta"] = np.sum(dz, axis=0)
        ds = dz * gamma
        Wf = W.reshape(W.shape[0], -1)
        # d(s)/dW_i = x / r - s W_i / r^2
        G = (ds.T @ rows_in) / norms[:, None]
        G -= (np.sum(ds * s, axis=0) / norms**2)[:, None] * Wf
        self.grads["W"] = G.reshape(W.shape)
        return (ds / norms) @ Wf


class NormPropDense(_NormPropMixin, Layer):
    def __init__(self, W, gamma=None, beta=None, activation="relu"):
        self._setup(W, gamma, beta, activation)
        if self.params["W"].ndim != 2:
            raise DimensionError(f"dense weight must be 2-d, got {self.params['W'].shape}")

    def forward(self, x, train=False):
        x = tensor.as_float(x)
        out, (s, z, norms) = self._forward_rows(tensor.matmul(x, self.params["W"].T))
        self._cache = (x, s, z, norms)
        return out

    def backward(self, grad_out):
        x, s, z, norms = self._cached()
        return self._backward_rows(grad_out, x, s, z, norms)

    def output_shape(self, input_shape):
        return (self.params["W"].shape[0],)


class NormPropConv(_NormPropMixin, Layer):
    def __init__(self, W, gamma=None, beta=None, stride=1, pad=0, activation="relu"):
        self._setup(W, gamma, beta, activation)
        if self.params["W"].ndim != 4:
            raise DimensionError(f"conv filters must be 4-d, got {self.params['W'].shape}")
        self.stride = int(stride)
        self.pad = int(pad)

    def forward(self, x, train=False):
        x = tensor.as_float(x)
        W = self.params["W"]
        m, d, h, w = W.shape
        if x.ndim != 4 or x.shape[1] != d:
            raise DimensionError(f"NormPropConv expects (N, {d}, L, B) input, got {x.shape}")
        N = x.shape[0]
        Lo, Bo = self.output_shape(x.shape[1:])[1:]
        tensor.check_window(x.shape[2:], (h, w), self.stride, self.pad, "NormPropConv")
        cols = tensor.im2col(x, h, w, self.stride, self.pad)
        out, (s, z, norms) = self._forward_rows(cols @ W.reshape(m, -1).T)
        self._cache = (x.shape, cols, s, z, norms)
        return np.ascontiguousarray(out.reshape(N, Lo, Bo, m).transpose(0, 3, 1, 2))

    def backward(self, grad_out):
        shape, cols, s, z, norms = self._cached()
        m, _, h, w = self.params["W"].shape
        grad = grad_out.transpose(0, 2, 3, 1).reshape(-1, m)
        dcols = self._backward_rows(grad, cols, s, z, norms)
        return tensor.col2im(dcols, shape, h, w, self.stride, self.pad)

    def output_shape(self, input_shape):
        m, _, h, w = self.params["W"].shape
        return (
            m,
            tensor.output_size(input_shape[1], h, self.stride, self.pad),
            tensor.output_size(input_shape[2], w, self.stride, self.pad),
        )


class BatchNormDense(Layer):
    """Dense layer with per-unit mini-batch normalization of the pre-activation.

    Train mode normalizes ``x W^T`` by the batch mean and biased variance and
    updates ``running``; eval mode uses ``running`` and treats each sample
    independently.
    """

    normalization = "batchnorm"

    def __init__(self, W, gamma=None, beta=None, activation="relu", eps=BN_EPS, decay=0.99):
        super().__init__()
        W = np.array(W, dtype=np.float64)
        m = W.shape[0]
        self.params = {
            "W": W,
            "gamma": np.ones(m) if gamma is None else np.array(gamma, dtype=np.float64),
            "beta": np.zeros(m) if beta is None else np.array(beta, dtype=np.float64),
        }
        self.activation = get_activation(activation)
        self.eps = eps
        self.running = RunningStats(m, decay=decay)

    def forward(self, x, train=False):
        x = tensor.as_float(x)
        u = tensor.matmul(x, self.params["W"].T)
        if train:
            if x.shape[0] < 2:
                raise UnsupportedConfigurationError(
                    "batch normalization cannot train with batch size 1: batch statistics are undefined"
                )
            mean, var = u.mean(axis=0), u.var(axis=0)
            self.running.update(mean, var)
        else:
            if self.running.steps == 0:
                raise StateError("BatchNormDense evaluated before any training step")
            mean, var = self.running.mean, self.running.var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (u - mean) * inv_std
        z = self.params["gamma"] * xhat + self.params["beta"]
        self._cache = (x, xhat, z, inv_std, train)
        return self.activation(z)

    def backward(self, grad_out):
        x, xhat, z, inv_std, train = self._cached()
        dz = grad_out * self.activation.derivative(z)
        self.grads["gamma"] = np.sum(dz * xhat, axis=0)
        self.grads["beta"] = np.sum(dz, axis=0)
        dxhat = dz * self.params["gamma"]
        if train:
            n = x.shape[0]
            du = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0))
        else:
            du = dxhat * inv_std
        self.grads["W"] = du.T @ x
        return du @ self.params["W"]

    def output_shape(self, input_shape):
        return (self.params["W"].shape[0],)


class PlainDense(Layer):
    """``act(x W^T + b)`` with no normalization; identity activation gives logits."""

    def __init__(self, W, b=None, activation="relu"):
        super().__init__()
        W = np.array(W, dtype=np.float64)
        self.params = {"W": W, "b": np.zeros(W.shape[0]) if b is None else np.array(b, dtype=np.float64)}
        self.activation = get_activation(activation)

    def forward(self, x, train=False):
        x = tensor.as_float(x)
        z = tensor.matmul(x, self.params["W"].T) + self.params["b"]
        self._cache = (x, z)
        return self.activation(z)

    def backward(self, grad_out):
        x, z = self._cached()
        dz = grad_out * self.activation.derivative(z)
        self.grads["W"] = dz.T @ x
        self.grads["b"] = dz.sum(axis=0)
        return dz @ self.params["W"]

    def output_shape(self, input_shape):
        return (self.params["W"].shape[0],)


class PlainConv(Layer):
    def __init__(self, W, b=None, stride=1, pad=0, activation="relu"):
        super().__init__()
        W = np.array(W, dtype=np.float64)
        self.params = {"W": W, "b": np.zeros(W.shape[0]) if b is None else np.array(b, dtype=np.float64)}
        self.stride = int(stride)
        self.pad = int(pad)
        self.activation = get_activation(activation)

    def forward(self, x, train=False):
        x = tensor.as_float(x)
        z = tensor.conv2d(x, self.params["W"], self.stride, self.pad) + self.params["b"][:, None, None]
        self._cache = (x, z)
        return self.activation(z)

    def backward(self, grad_out):
        x, z = self._cached()
        W = self.params["W"]
        m, _, h, w = W.shape
        dz = grad_out * self.activation.derivative(z)
        rows = dz.transpose(0, 2, 3, 1).reshape(-1, m)
        cols = tensor.im2col(x, h, w, self.stride, self.pad)
        self.grads["W"] = (rows.T @ cols).reshape(W.shape)
        self.grads["b"] = rows.sum(axis=0)
        return tensor.col2im(rows @ W.reshape(m, -1), x.shape, h, w, self.stride, self.pad)

    output_shape = NormPropConv.output_shape


class Pool(Layer):
    """Spatial max/avg pooling. NormProp statistics are not recomputed after it."""

    def __init__(self, kernel, stride, pad=0, mode="max"):
        super().__init__()
        self.kernel, self.stride, self.pad, self.mode = int(kernel), int(stride), int(pad), mode
        tensor.pool_windows(np.zeros((1, 1, kernel, kernel)), kernel, 1, 0, mode)  # validates mode

    def forward(self, x, train=False):
        x = tensor.as_float(x)
        win = tensor.pool_windows(x, self.kernel, self.stride, self.pad, self.mode)
        if self.mode == "max":
            idx = np.argmax(win, axis=-1)  # first maximum on ties
            out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        else:
            idx = None
            out = win.sum(axis=-1) / self.kernel**2
        self._cache = (x.shape, idx, out.shape)
        return out

    def backward(self, grad_out):
        shape, idx, out_shape = self._cached()
        N, C, L, B = shape
        k, s, p = self.kernel, self.stride, self.pad
        Lo, Bo = out_shape[2:]
        padded = np.zeros((N, C, L + 2 * p, B + 2 * p))
        if self.mode == "max":
            rows = np.arange(Lo)[:, None] * s + idx // k
            cols = np.arange(Bo)[None, :] * s + idx % k
            n_idx, c_idx = np.ogrid[:N, :C]
            np.add.at(padded, (n_idx[:, :, None, None], c_idx[:, :, None, None], rows, cols), grad_out)
        else:
            g = grad_out / k**2
            for i in range(k):
                for j in range(k):
                    padded[:, :, i:i + s * Lo:s, j:j + s * Bo:s] += g
        return padded[:, :, p:p + L, p:p + B]

    def output_shape(self, input_shape):
        C, L, B = input_shape
        k, s, p = self.kernel, self.stride, self.pad
        return (C, tensor.output_size(L, k, s, p), tensor.output_size(B, k, s, p))


class Flatten(Layer):
    def forward(self, x, train=False):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        return grad_out.reshape(self._cached())

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_forward_backward(logits, labels):
    """Mean softmax cross-entropy over the batch and its gradient w.r.t. ``logits``."""
    logits = tensor.as_float(logits)
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,) or not np.issubdtype(labels.dtype, np.integer):
        raise DataError(f"labels must be {n} integers, got shape {labels.shape} dtype {labels.dtype}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DataError(f"label out of range [0, {k}): min {labels.min()}, max {labels.max()}")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_norm - z[rows, labels]))
    grad = softmax(logits)
    grad[rows, labels] -= 1.0
    return loss, grad / n


class SoftmaxCrossEntropy:
    """Loss head; stateful wrapper around :func:`loss_forward_backward`."""

    def __init__(self):
        self._grad = None

    def forward(self, logits, labels):
        loss, self._grad = loss_forward_backward(logits, labels)
        return loss

    def backward(self):
        if self._grad is None:
            raise StateError("SoftmaxCrossEntropy.backward called before forward")
        return self._grad

    @staticmethod
    def probabilities(logits):
        return softmax(tensor.as_float(logits))


def layer_backward(layer, grad_out):
    """Run ``layer.backward`` and return ``(grad_in, param_grads)``."""
    grad_in = layer.backward(grad_out)
    return grad_in, dict(layer.grads)
