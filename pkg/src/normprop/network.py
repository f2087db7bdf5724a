"""Layer stacks built from the C/P/D architecture shorthand.

``C(filters,size,stride,pad)`` is a convolution, ``P(kernel,stride,pad,mode)``
a pooling layer and ``D(units)`` a dense layer. A ``:norm`` suffix overrides
the network-wide normalization for one layer, e.g. ``D(64):none``. The last
C or D layer is the classifier and produces logits (no activation, no
normalization).
"""

import math
import re
from dataclasses import dataclass

import numpy as np

from .activations import get_activation, jacobian_factor
from .exceptions import ConfigurationError
from .layers import (
    BatchNormDense,
    Flatten,
    NormPropConv,
    NormPropDense,
    PlainConv,
    PlainDense,
    Pool,
    layer_backward,
    softmax,
)

NORMS = ("normprop", "batchnorm", "none")
_SPEC = re.compile(r"^\s*([CPD])\(([^)]*)\)\s*(?::\s*(\w+))?\s*$")
_ITEM = re.compile(r"[CPD]\([^)]*\)(?::\w+)?")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    args: tuple
    norm: str = None

    def render(self):
        body = f"{self.kind}({','.join(str(a) for a in self.args)})"
        return f"{body}:{self.norm}" if self.norm else body


def parse_layer_spec(text):
    m = _SPEC.match(text)
    if not m:
        raise ConfigurationError(f"cannot parse layer spec {text!r}; expected C(...), P(...) or D(...)")
    kind, body, norm = m.groups()
    parts = [p.strip() for p in body.split(",")] if body.strip() else []
    expected = {"C": 4, "P": 4, "D": 1}[kind]
    if len(parts) != expected:
        raise ConfigurationError(f"{kind}(...) takes {expected} arguments, got {len(parts)} in {text!r}")
    try:
        if kind == "P":
            args = tuple(int(p) for p in parts[:3]) + (parts[3],)
        else:
            args = tuple(int(p) for p in parts)
    except ValueError:
        raise ConfigurationError(f"non-integer argument in layer spec {text!r}") from None
    if kind == "P" and args[3] not in ("max", "avg"):
        raise ConfigurationError(f"unknown pooling mode {args[3]!r} in {text!r}")
    if norm is not None and norm not in NORMS:
        raise ConfigurationError(f"unknown normalization {norm!r} in {text!r}")
    positive = args[:3] if kind == "C" else args[:2]
    if any(a <= 0 for a in positive) or (kind != "D" and args[-1 if kind == "C" else 2] < 0):
        raise ConfigurationError(f"sizes and strides must be positive and padding non-negative in {text!r}")
    return LayerSpec(kind, args, norm)


def parse_architecture(text):
    """Parse a dash- or newline-separated list of layer specs."""
    if isinstance(text, str):
        items = _ITEM.findall(text)
        leftover = _ITEM.sub("", text)
        if leftover.strip(" -\n\t"):
            raise ConfigurationError(f"cannot parse architecture {text!r}; stray text {leftover.strip()!r}")
    else:
        items = list(text)
    return [s if isinstance(s, LayerSpec) else parse_layer_spec(s) for s in items]


def fans(shape):
    if len(shape) == 2:
        return shape[1], shape[0]
    m, d, h, w = shape
    return d * h * w, m * h * w


def init_weights(shape, seed):
    """Normalized (Glorot) uniform initialization on +-sqrt(6 / (fan_in + fan_out))."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    fan_in, fan_out = fans(tuple(shape))
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=tuple(shape))


def init_gamma(m, activation="relu", mode="jacobian"):
    """Scale vector initialized to ``1 / jacobian_factor`` (1/1.21 for ReLU) or to ones."""
    if mode == "one":
        return np.ones(m)
    if mode != "jacobian":
        raise ConfigurationError(f"unknown gamma init {mode!r}; expected 'jacobian' or 'one'")
    act = get_activation(activation)
    # the ReLU factor is used at its quoted two-decimal value
    factor = 1.21 if act.kind == "relu" else jacobian_factor(act)
    return np.full(m, 1.0 / factor)


class Network:
    """Sequential stack of layers taking flat feature rows as input."""

    def __init__(self, layers, input_shape, specs=None):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.specs = list(specs or [])

    def _reshape(self, x):
        x = np.asarray(x, dtype=np.float64)
        return x.reshape((x.shape[0],) + self.input_shape)

    def forward(self, x, train=False):
        out = self._reshape(x)
        for layer in self.layers:
            out = layer.forward(out, train=train)
        return out

    def layer_inputs(self, x):
        """Eval-mode forward returning the input array of every layer, then the logits."""
        acts = [self._reshape(x)]
        for layer in self.layers:
            acts.append(layer.forward(acts[-1], train=False))
        return acts

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad, _ = layer_backward(layer, grad)
        return grad

    def predict_proba(self, x):
        return softmax(self.forward(x, train=False))

    def predict(self, x):
        return np.argmax(self.forward(x, train=False), axis=1)

    @property
    def weighted_layers(self):
        return [(i, layer) for i, layer in enumerate(self.layers) if layer.params]

    def named_parameters(self):
        for i, layer in enumerate(self.layers):
            for name, value in layer.params.items():
                yield f"layer{i}.{name}", value

    def named_gradients(self):
        for i, layer in enumerate(self.layers):
            for name, value in layer.grads.items():
                yield f"layer{i}.{name}", value

    def parameters(self):
        return dict(self.named_parameters())

    def gradients(self):
        return dict(self.named_gradients())

    def running_stats(self):
        return {f"layer{i}": layer.running for i, layer in enumerate(self.layers) if hasattr(layer, "running")}

    @property
    def uses_batch_statistics(self):
        return any(isinstance(layer, BatchNormDense) for layer in self.layers)

    def __repr__(self):
        return "Network(\n  " + "\n  ".join(repr(layer) for layer in self.layers) + "\n)"


def build_network(specs, input_shape, norm="normprop", activation="relu", seed=0, gamma_init="jacobian",
                  constrain_output=False, bn_decay=0.99):
    """Instantiate layers for ``specs`` on inputs of ``input_shape``.

    ``input_shape`` is ``(features,)`` or ``(channels, height, width)``.
    """
    if norm not in NORMS:
        raise ConfigurationError(f"unknown normalization {norm!r}; expected one of {NORMS}")
    specs = parse_architecture(specs)
    weighted = [k for k, s in enumerate(specs) if s.kind in "CD"]
    if not weighted:
        raise ConfigurationError("architecture needs at least one C or D layer")
    last = weighted[-1]
    rng = np.random.default_rng(seed)
    shape = tuple(int(v) for v in input_shape)
    layers = []

    def add(layer):
        nonlocal shape
        layers.append(layer)
        shape = layer.output_shape(shape)
        if min(shape) <= 0:
            raise ConfigurationError(f"layer {len(layers) - 1} produces an empty output of shape {shape}")

    for k, spec in enumerate(specs):
        mode = spec.norm or norm
        if spec.kind in "CP" and len(shape) != 3:
            raise ConfigurationError(f"{spec.render()} needs image input, current shape is {shape}")
        if spec.kind == "P":
            add(Pool(*spec.args))
            continue
        if spec.kind == "D" and len(shape) != 1:
            add(Flatten())
        m = spec.args[0]
        if spec.kind == "D":
            W = init_weights((m, shape[0]), rng)
        else:
            _, size, stride, pad = spec.args
            W = init_weights((m, shape[0], size, size), rng)
        if k == last:
            layer = PlainDense(W, activation="identity") if spec.kind == "D" else PlainConv(
                W, stride=stride, pad=pad, activation="identity")
            layer.l2_constraint = constrain_output
        elif mode == "normprop":
            gamma = init_gamma(m, activation, gamma_init)
            layer = NormPropDense(W, gamma, activation=activation) if spec.kind == "D" else NormPropConv(
                W, gamma, stride=stride, pad=pad, activation=activation)
        elif mode == "batchnorm":
            if spec.kind == "C":
                raise ConfigurationError("batch normalization is only implemented for dense layers")
            layer = BatchNormDense(W, activation=activation, decay=bn_decay)
        else:
            layer = PlainDense(W, activation=activation) if spec.kind == "D" else PlainConv(
                W, stride=stride, pad=pad, activation=activation)
        add(layer)
    if len(shape) != 1:
        add(Flatten())
    return Network(layers, input_shape, specs)
