"""Activations and their moments under a standard-normal input.

A NormProp layer divides its post-activation by ``c1`` (standard deviation)
after subtracting ``c2`` (mean), both taken for ``act(X)`` with
``X ~ N(0, 1)``. ReLU and PReLU have closed forms; anything else is simulated.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .exceptions import ConfigurationError, EvaluationError

SQRT_2PI = math.sqrt(2.0 * math.pi)

# sample size and seed used when a layer needs simulated constants
DEFAULT_MC_SAMPLES = 1_000_000
DEFAULT_MC_SEED = 0


@dataclass(frozen=True)
class Activation:
    """Pointwise nonlinearity.

    ``kind`` is one of ``relu``, ``prelu``, ``tanh``, ``identity`` or
    ``custom``. ``slope`` is the PReLU negative-side slope. Custom activations
    supply ``fn`` and optionally ``grad``; without ``grad`` a central
    difference is used.
    """

    kind: str = "relu"
    slope: float = 0.0
    fn: Optional[Callable] = None
    grad: Optional[Callable] = None

    def __post_init__(self):
        if self.kind not in ("relu", "prelu", "tanh", "identity", "custom"):
            raise ConfigurationError(f"unknown activation {self.kind!r}")
        if not math.isfinite(self.slope):
            raise ConfigurationError(f"PReLU slope must be finite, got {self.slope}")
        if self.kind == "custom" and self.fn is None:
            raise ConfigurationError("custom activation requires fn")

    def __call__(self, x):
        if self.kind == "relu":
            return np.maximum(x, 0.0)
        if self.kind == "prelu":
            return np.where(x > 0, x, self.slope * x)
        if self.kind == "tanh":
            return np.tanh(x)
        if self.kind == "identity":
            return np.array(x, dtype=np.float64, copy=True)
        return np.asarray(self.fn(x), dtype=np.float64)

    def derivative(self, x):
        # right-derivative at the ReLU/PReLU kink
        if self.kind == "relu":
            return (x >= 0).astype(np.float64)
        if self.kind == "prelu":
            return np.where(x >= 0, 1.0, self.slope)
        if self.kind == "tanh":
            return 1.0 - np.tanh(x) ** 2
        if self.kind == "identity":
            return np.ones_like(x, dtype=np.float64)
        if self.grad is not None:
            return np.asarray(self.grad(x), dtype=np.float64)
        h = 1e-6
        return (self(x + h) - self(x - h)) / (2 * h)

    @property
    def token(self):
        if self.kind == "prelu":
            return f"prelu:{self.slope!r}"
        return self.kind


def get_activation(name, slope=None):
    """Build an activation from a token such as ``relu``, ``tanh``, ``prelu:0.25``."""
    if isinstance(name, Activation):
        return name
    name = str(name).strip().lower()
    if name.startswith("prelu"):
        if ":" in name:
            name, raw = name.split(":", 1)
            slope = float(raw)
        return Activation("prelu", slope=0.25 if slope is None else float(slope))
    if name in ("relu", "tanh", "identity", "linear"):
        return Activation("identity" if name == "linear" else name)
    raise ConfigurationError(f"unknown activation {name!r}")


@dataclass(frozen=True)
class ActivationStats:
    c1: float
    c2: float
    source: str = "analytic"
    sample_count: int = 0

    def __post_init__(self):
        if not self.c1 > 0:
            raise EvaluationError(f"post-activation std must be positive, got c1={self.c1}")


def prelu_stats(a):
    a = float(a)
    if not math.isfinite(a):
        raise ConfigurationError(f"PReLU slope must be finite, got {a}")
    c2 = (1.0 - a) / SQRT_2PI
    var = 0.5 * ((1.0 + a * a) - (1.0 - a) ** 2 / math.pi)
    # (1 + a^2) - (1 - a)^2/pi >= (1 + a^2)(1 - 2/pi) > 0
    assert var > 0, var
    return ActivationStats(c1=math.sqrt(var), c2=c2)


def relu_stats():
    """Mean ``1/sqrt(2 pi)`` and variance ``(1 - 1/pi)/2`` of a rectified standard normal."""
    return prelu_stats(0.0)


def monte_carlo_stats(act, n=DEFAULT_MC_SAMPLES, seed=DEFAULT_MC_SEED):
    if n < 10_000:
        raise ConfigurationError(f"Monte Carlo needs at least 1e4 samples, got {n}")
    act = get_activation(act)
    x = np.random.default_rng(seed).standard_normal(int(n))
    y = act(x)
    bad = ~np.isfinite(y)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise EvaluationError(f"activation {act.token} produced {y[i]} at input {x[i]!r}")
    return ActivationStats(c1=float(y.std(ddof=1)), c2=float(y.mean()), source="monte_carlo", sample_count=int(n))


@lru_cache(maxsize=None)
def _simulated_stats(act):
    return monte_carlo_stats(act, DEFAULT_MC_SAMPLES, DEFAULT_MC_SEED)


def stats_for(act):
    """Constants a layer uses for ``act``: closed form when one exists."""
    act = get_activation(act)
    if act.kind == "relu":
        return relu_stats()
    if act.kind == "prelu":
        return prelu_stats(act.slope)
    if act.kind == "identity":
        return prelu_stats(1.0)
    if act.kind == "custom":
        return monte_carlo_stats(act)
    return _simulated_stats(act)


def jacobian_factor(act, stats=None, n=DEFAULT_MC_SAMPLES, seed=DEFAULT_MC_SEED, method="auto"):
    """Typical singular value of a NormProp layer Jacobian, ``sqrt(E[act'(X)^2]) / c1``.

    For ReLU this is ``sqrt(1/2) / c1``, about 1.2112. ``method="auto"`` uses
    the closed form for ReLU and identity and simulation otherwise;
    ``"analytic"`` also covers PReLU (``E[act'^2] = (1 + a^2) / 2``);
    ``"monte_carlo"`` always simulates.
    """
    act = get_activation(act)
    stats = stats_for(act) if stats is None else stats
    if method not in ("auto", "analytic", "monte_carlo"):
        raise ConfigurationError(f"unknown method {method!r}")
    closed = {"relu": 0.5, "identity": 1.0}
    if method == "analytic":
        if act.kind == "prelu":
            return math.sqrt((1.0 + act.slope**2) / 2.0) / stats.c1
        if act.kind not in closed:
            raise ConfigurationError(f"no closed-form Jacobian factor for {act.token}")
    if method != "monte_carlo" and act.kind in closed:
        second_moment = closed[act.kind]
    else:
        x = np.random.default_rng(seed).standard_normal(int(n))
        second_moment = float(np.mean(act.derivative(x) ** 2))
    return math.sqrt(second_moment) / stats.c1
