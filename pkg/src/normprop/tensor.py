"""Dense array primitives shared by the layers and the analysis tools.

Arrays are plain ``numpy.ndarray`` objects in float64. Convolutions are
cross-correlations (no kernel flip) with zero padding. Every function here is a
pure function of its inputs.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ConfigurationError, DimensionError

POOL_MODES = ("max", "avg")


def as_float(x):
    return np.asarray(x, dtype=np.float64)


def matmul(a, b):
    """Matrix product of ``a`` (m, k) and ``b`` (k, n)."""
    a = as_float(a)
    b = as_float(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    return a @ b


def output_size(size, kernel, stride, pad):
    return (size + 2 * pad - kernel) // stride + 1


def check_window(spatial, kernel_hw, stride, pad, what):
    if stride < 1 or pad < 0:
        raise ConfigurationError(f"{what}: stride must be >= 1 and pad >= 0, got stride={stride}, pad={pad}")
    (L, B), (h, w) = spatial, kernel_hw
    if h > L + 2 * pad or w > B + 2 * pad:
        raise DimensionError(
            f"{what}: kernel {h}x{w} larger than padded input {L + 2 * pad}x{B + 2 * pad}"
        )


def _pad(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def im2col(x, h, w, stride, pad):
    """Unfold ``x`` (N, d, L, B) into patch rows of shape (N*L'*B', d*h*w)."""
    N, d, L, B = x.shape
    Lo, Bo = output_size(L, h, stride, pad), output_size(B, w, stride, pad)
    windows = sliding_window_view(_pad(x, pad), (h, w), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride][:, :, :Lo, :Bo]
    # (N, d, Lo, Bo, h, w) -> (N, Lo, Bo, d, h, w)
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5))
    return cols.reshape(N * Lo * Bo, d * h * w)


def col2im(cols, input_shape, h, w, stride, pad):
    """Adjoint of :func:`im2col`: scatter-add patch rows back onto the input grid."""
    N, d, L, B = input_shape
    Lo, Bo = output_size(L, h, stride, pad), output_size(B, w, stride, pad)
    cols = cols.reshape(N, Lo, Bo, d, h, w).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros((N, d, L + 2 * pad, B + 2 * pad))
    for i in range(h):
        for j in range(w):
            out[:, :, i:i + stride * Lo:stride, j:j + stride * Bo:stride] += cols[:, :, i, j]
    if pad:
        out = out[:, :, pad:pad + L, pad:pad + B]
    return out


def conv2d(x, filters, stride=1, pad=0):
    """Cross-correlate ``x`` with a filter bank.

    ``x`` is (d, L, B) for one image or (N, d, L, B) for a batch; ``filters``
    is (m, d, h, w). Returns (m, L', B') or (N, m, L', B') respectively, with
    ``L' = (L + 2*pad - h) // stride + 1``.
    """
    x = as_float(x)
    filters = as_float(filters)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or filters.ndim != 4 or filters.shape[1] != x.shape[1]:
        raise DimensionError(
            f"conv2d: input {x.shape[1:] if single else x.shape} incompatible with filters {filters.shape}"
        )
    m, _, h, w = filters.shape
    check_window(x.shape[2:], (h, w), stride, pad, "conv2d")
    N = x.shape[0]
    Lo, Bo = output_size(x.shape[2], h, stride, pad), output_size(x.shape[3], w, stride, pad)
    out = im2col(x, h, w, stride, pad) @ filters.reshape(m, -1).T
    out = out.reshape(N, Lo, Bo, m).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    return out[0] if single else out


def pool_windows(x, kernel, stride, pad, mode):
    """Return (N, C, L', B', kernel*kernel) windows over a padded (N, C, L, B) input."""
    if mode not in POOL_MODES:
        raise ConfigurationError(f"pool2d: unknown mode {mode!r}, expected one of {POOL_MODES}")
    check_window(x.shape[2:], (kernel, kernel), stride, pad, "pool2d")
    if pad >= kernel:
        raise ConfigurationError(f"pool2d: pad ({pad}) must be smaller than kernel ({kernel})")
    fill = -np.inf if mode == "max" else 0.0
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=fill) if pad else x
    Lo = output_size(x.shape[2], kernel, stride, pad)
    Bo = output_size(x.shape[3], kernel, stride, pad)
    win = sliding_window_view(padded, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Lo, :Bo]
    return win.reshape(*win.shape[:4], kernel * kernel)


def pool2d(x, kernel, stride, pad=0, mode="max"):
    """Per-channel spatial pooling of (C, L, B) or (N, C, L, B) input.

    Average pooling divides by the full kernel area, counting zero padding.
    """
    x = as_float(x)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4:
        raise DimensionError(f"pool2d: expected 3-d or 4-d input, got shape {x.shape}")
    win = pool_windows(x, kernel, stride, pad, mode)
    out = win.max(axis=-1) if mode == "max" else win.sum(axis=-1) / (kernel * kernel)
    return out[0] if single else out


def row_l2_norms(w):
    """Euclidean norm of each row (dense) or Frobenius norm of each filter (conv)."""
    w = as_float(w)
    return np.sqrt(np.sum(w.reshape(w.shape[0], -1) ** 2, axis=1))
