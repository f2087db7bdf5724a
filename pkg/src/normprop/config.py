"""Flat ``key=value`` experiment configuration.

One setting per line, ``#`` starts a comment, and the architecture is given
by repeated ``layer=`` lines in order::

    norm=normprop
    data=synthetic
    layer=D(64)
    layer=D(64)
    layer=D(2)
"""

import dataclasses
import hashlib
import os
from dataclasses import dataclass, field, fields

from .exceptions import ConfigurationError
from .network import NORMS, parse_layer_spec
from .training import DATA_NORMS, TrainConfig

DATA_SOURCES = ("synthetic", "idx", "csv", "cifar")


@dataclass
class ExperimentConfig:
    norm: str = "normprop"
    activation: str = "relu"
    gamma_init: str = "jacobian"
    data: str = "synthetic"
    task: str = "two-class"
    n_samples: int = 2000
    dim: int = 20
    classes: int = 3
    data_seed: int = 0
    data_path: str = ""
    labels_path: str = ""
    label_column: str = "label"
    eval_fraction: float = 0.2
    data_norm: str = "global"
    seed: int = 0
    batch_size: int = 50
    epochs: int = 20
    lr: float = 0.05
    baseline_lr: float = 0.01
    halve_every: int = 10
    momentum: float = 0.9
    weight_decay: float = 0.0005
    running_decay: float = 0.99
    constrain_output: bool = False
    probe_size: int = 2048
    seeds: int = 1
    out: str = "runs"
    layers: list = field(default_factory=lambda: ["D(64)", "D(64)", "D(2)"])

    def __post_init__(self):
        if self.norm not in NORMS:
            raise ConfigurationError(f"norm must be one of {NORMS}, got {self.norm!r}")
        if self.data_norm not in DATA_NORMS:
            raise ConfigurationError(f"data_norm must be one of {DATA_NORMS}, got {self.data_norm!r}")
        if self.data not in DATA_SOURCES:
            raise ConfigurationError(f"data must be one of {DATA_SOURCES}, got {self.data!r}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.layers:
            raise ConfigurationError("at least one layer= line is required")
        self.layers = [parse_layer_spec(s).render() for s in self.layers]

    def validate(self):
        """Check that every referenced file exists."""
        needed = {"idx": ("data_path", "labels_path"), "csv": ("data_path",), "cifar": ("data_path",)}
        for key in needed.get(self.data, ()):
            path = getattr(self, key)
            if not path or not os.path.exists(path):
                raise ConfigurationError(f"{key}={path!r} does not exist")
        return self

    def train_config(self, norm=None, seed=None):
        norm = norm or self.norm
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.baseline_lr if norm == "none" else self.lr,
            halve_every=self.halve_every,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            data_norm=self.data_norm,
            running_decay=self.running_decay,
            seed=self.seed if seed is None else seed,
        )

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def render(self):
        lines = []
        for f in fields(self):
            if f.name == "layers":
                continue
            value = getattr(self, f.name)
            lines.append(f"{f.name}={_render_value(value)}")
        lines.extend(f"layer={spec}" for spec in self.layers)
        return "\n".join(lines) + "\n"

    @property
    def hash(self):
        """Digest of every setting except the output directory."""
        text = "".join(line for line in self.render().splitlines(keepends=True) if not line.startswith("out="))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _render_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(name, typ, raw):
    try:
        if typ in (bool, "bool"):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"bad value for {name}: {raw!r}") from None
    return raw


def parse_config(text):
    """Parse config text into an :class:`ExperimentConfig`."""
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    values, layers = {}, []
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {line_no}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key == "layer":
            layers.append(raw)
        elif key in types and key != "layers":
            values[key] = _convert(key, types[key], raw)
        else:
            raise ConfigurationError(f"line {line_no}: unknown key {key!r}")
    if layers:
        values["layers"] = layers
    return ExperimentConfig(**values)


def load_config(path):
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
