"""Numerical checks on the quantities NormProp relies on.

* coherence and the canonical covariance bound of a weight matrix,
* the measured distance of a pre-activation covariance from diagonal,
* the average Jacobian ``E[J J^T]`` of a NormProp dense layer,
* per-epoch input-mean traces of hidden units during training.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor
from .data import apply_normalization
from .exceptions import ConfigurationError, DimensionError, InsufficientDataError
from .layers import check_row_norms


def coherence(W):
    """Largest absolute cosine between two distinct rows of ``W``."""
    W = tensor.as_float(W)
    W = W.reshape(W.shape[0], -1)
    if W.shape[0] < 2:
        raise DimensionError(f"coherence needs at least 2 rows, got {W.shape[0]}")
    norms = check_row_norms(W)
    G = np.abs((W / norms[:, None]) @ (W / norms[:, None]).T)
    np.fill_diagonal(G, 0.0)
    return float(min(G.max(), 1.0))


def canonical_bound(W, sigma=1.0):
    """``sigma^2 * mu * sqrt(sum_{i != j} |W_i|^2 |W_j|^2)``."""
    W = tensor.as_float(W)
    mu = coherence(W)
    sq = tensor.row_l2_norms(W) ** 2
    off = sq.sum() ** 2 - np.sum(sq**2)
    return float(sigma**2 * mu * math.sqrt(max(off, 0.0)))


@dataclass
class CovarianceReport:
    sigma_hat: np.ndarray
    alpha_star: np.ndarray
    gap: float
    bound: float
    coherence: float
    gap_empirical_optimum: float
    n_samples: int

    def row(self):
        m = self.sigma_hat.shape[0]
        return {
            "m": m,
            "n_samples": self.n_samples,
            "coherence": self.coherence,
            "bound": self.bound,
            "gap": self.gap,
            "gap_empirical_optimum": self.gap_empirical_optimum,
            "tolerance": 3.0 * m / math.sqrt(self.n_samples),
        }


def empirical_covariance(u, centered=True):
    """Second-moment matrix of the rows of ``u``; subtracts the sample mean unless ``centered``."""
    u = tensor.as_float(u)
    if not centered:
        u = u - u.mean(axis=0)
    S = u.T @ u / u.shape[0]
    return (S + S.T) / 2


def canonical_gap(samples_u, W, sigma=1.0, centered=True):
    """Compare the covariance of ``samples_u`` (rows of ``W x``) with its canonical approximation.

    ``gap`` is measured at ``alpha*_i = sigma^2 |W_i|^2``; ``gap_empirical_optimum``
    at ``diag(Sigma_hat)``, the Frobenius-optimal diagonal for the sample.
    Pass ``centered=False`` when the inputs are not known to be zero-mean.
    """
    u = tensor.as_float(samples_u)
    if u.shape[0] < 100:
        raise InsufficientDataError(f"covariance gap needs at least 100 samples, got {u.shape[0]}")
    W = tensor.as_float(W)
    if u.shape[1] != W.shape[0]:
        raise DimensionError(f"samples have {u.shape[1]} features but W has {W.shape[0]} rows")
    S = empirical_covariance(u, centered)
    alpha = sigma**2 * tensor.row_l2_norms(W) ** 2
    off = S - np.diag(np.diag(S))
    return CovarianceReport(
        sigma_hat=S,
        alpha_star=alpha,
        gap=float(np.linalg.norm(S - np.diag(alpha))),
        bound=canonical_bound(W, sigma),
        coherence=coherence(W),
        gap_empirical_optimum=float(np.linalg.norm(off)),
        n_samples=u.shape[0],
    )


def jacobian_probe(layer, x_samples):
    """Average ``J J^T`` of a NormProp dense layer over ``x_samples`` and its singular values.

    Row ``i`` of the per-sample Jacobian is
    ``gamma_i act'(z_i) W_i / (c1 |W_i|)``; averaging ``J J^T`` therefore only
    needs the mean outer product of the derivative vectors.
    """
    x = tensor.as_float(x_samples)
    W, gamma, beta = layer.params["W"], layer.params["gamma"], layer.params["beta"]
    norms = check_row_norms(W)
    Wt = W / norms[:, None]
    z = gamma * (x @ Wt.T) + beta
    D = layer.activation.derivative(z) * gamma / layer.stats.c1
    mean_JJt = (D.T @ D / x.shape[0]) * (Wt @ Wt.T)
    mean_JJt = (mean_JJt + mean_JJt.T) / 2
    eig = np.linalg.eigvalsh(mean_JJt)
    return mean_JJt, np.sqrt(np.clip(eig, 0.0, None))[::-1]


@dataclass
class ShiftTrace:
    """Input mean of one hidden unit over a fixed probe set, one entry per epoch."""

    layer_index: int
    unit_index: int
    means: list = field(default_factory=list)

    def append(self, epoch, mean):
        if self.means and epoch <= self.means[-1][0]:
            raise ConfigurationError(f"epochs must increase: {epoch} after {self.means[-1][0]}")
        self.means.append((int(epoch), float(mean)))

    @property
    def values(self):
        return np.array([m for _, m in self.means])


class ShiftMonitor:
    """Records, after each epoch, the mean input to one fixed unit of every monitored layer.

    Monitored layers are all weighted layers except the first (whose input is
    the data). The "input to a unit" is the feature of the preceding
    representation feeding it: a feature index for dense inputs, a channel
    (averaged over positions) for convolutional inputs.
    """

    def __init__(self, network, probe_X, units=None, seed=0, layers=None):
        self.probe_X = tensor.as_float(probe_X)
        weighted = [i for i, _ in network.weighted_layers]
        layers = weighted[1:] if layers is None else list(layers)
        shapes, shape = [], network.input_shape
        for layer in network.layers:
            shapes.append(shape)
            shape = layer.output_shape(shape)
        rng = np.random.default_rng(seed)
        self.traces = []
        for k, li in enumerate(layers):
            if not 0 <= li < len(network.layers):
                raise ConfigurationError(f"layer index {li} out of range for {len(network.layers)} layers")
            width = shapes[li][0]
            unit = int(rng.integers(width)) if units is None else int(units[k])
            if not 0 <= unit < width:
                raise ConfigurationError(f"unit {unit} out of range for layer {li} input width {width}")
            self.traces.append(ShiftTrace(li, unit))

    def __call__(self, epoch, network, data_stats):
        self.record(epoch, network, data_stats)

    def record(self, epoch, network, data_stats=None):
        x = self.probe_X if data_stats is None else apply_normalization(self.probe_X, data_stats)
        acts = network.layer_inputs(x)
        for trace in self.traces:
            a = acts[trace.layer_index][:, trace.unit_index]
            trace.append(epoch, float(np.mean(a)))

    def rows(self):
        for trace in self.traces:
            for epoch, mean in trace.means:
                yield {"layer": trace.layer_index, "unit": trace.unit_index, "epoch": epoch, "mean": mean}


def shift_monitor(network, probe_set, unit_spec=None, seed=0):
    """Build a :class:`ShiftMonitor`; ``unit_spec`` optionally fixes the unit per monitored layer."""
    X = probe_set.X if hasattr(probe_set, "X") else probe_set
    return ShiftMonitor(network, X, units=unit_spec, seed=seed)


def write_csv(target, rows, fieldnames, comment=None):
    """Write ``rows`` (dicts) as CSV to a path or open text file, after an optional ``# comment`` line."""
    if hasattr(target, "write"):
        _write_rows(target, rows, fieldnames, comment)
    else:
        with open(target, "w", newline="") as fh:
            _write_rows(fh, rows, fieldnames, comment)


def _write_rows(fh, rows, fieldnames, comment):
    if comment:
        fh.write(f"# {comment}\n")
    writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(v) for k, v in row.items()})


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v
