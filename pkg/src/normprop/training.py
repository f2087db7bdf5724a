"""SGD with momentum, learning-rate halving, the unit-norm weight constraint,
checkpoints and the epoch loop."""

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import (
    DEFAULT_DECAY,
    DatasetStats,
    RunningStats,
    apply_normalization,
    batch_normalize_data,
    fit_global_stats,
)
from .exceptions import ConfigurationError, DivergenceError, UnsupportedConfigurationError
from .layers import check_row_norms, loss_forward_backward
from .network import init_gamma, init_weights  # noqa: F401  re-exported

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
DATA_NORMS = ("global", "batch")


@dataclass
class OptimizerState:
    lr: float
    momentum: float = 0.9
    weight_decay: float = 0.0005
    velocity: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigurationError(f"learning rate must be positive, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError(f"momentum must lie in [0, 1), got {self.momentum}")


@dataclass(frozen=True)
class Schedule:
    initial_lr: float
    halve_every: int = 10

    def __post_init__(self):
        if self.halve_every < 1:
            raise ConfigurationError(f"halve_every must be >= 1, got {self.halve_every}")

    def lr_at(self, epoch):
        """Learning rate for zero-based ``epoch``."""
        return self.initial_lr * 0.5 ** (epoch // self.halve_every)


def sgd_step(params, grads, state, decay=None):
    """In-place momentum update ``v = mu v - lr (g + wd p)``, ``p += v``.

    ``decay`` is the set of parameter names that receive weight decay; by
    default every parameter does.
    """
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ConfigurationError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for parameter {name}")
        wd = state.weight_decay if decay is None or name in decay else 0.0
        v = state.velocity.get(name)
        if v is None:
            v = state.velocity[name] = np.zeros_like(p)
        v *= state.momentum
        v -= state.lr * (g + wd * p)
        p += v
    return params, state


def apply_l2_constraint(layer):
    """Rescale every weight row (dense) or filter (conv) of ``layer`` to unit norm."""
    W = layer.params["W"]
    norms = check_row_norms(W)
    W /= norms.reshape((-1,) + (1,) * (W.ndim - 1))
    return layer


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 50
    lr: float = 0.05
    halve_every: int = 10
    momentum: float = 0.9
    weight_decay: float = 0.0005
    data_norm: str = "global"
    running_decay: float = DEFAULT_DECAY
    seed: int = 0
    eval_batch_size: int = 500

    def __post_init__(self):
        if self.data_norm not in DATA_NORMS:
            raise ConfigurationError(f"data_norm must be one of {DATA_NORMS}, got {self.data_norm!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError(f"batch_size must be >= 1 and epochs >= 0")


class DataNormalizer:
    """Input normalization for a training run: global statistics or per-batch with a running estimate."""

    def __init__(self, mode, features, decay=DEFAULT_DECAY):
        if mode not in DATA_NORMS:
            raise ConfigurationError(f"data normalization must be one of {DATA_NORMS}, got {mode!r}")
        self.mode = mode
        self.stats = None
        self.running = RunningStats(features, decay) if mode == "batch" else None

    def fit(self, X):
        if self.mode == "global":
            self.stats = fit_global_stats(X)
        return self

    def train_batch(self, x):
        if self.mode == "global":
            return apply_normalization(x, self.stats)
        return batch_normalize_data(x, self.running)[0]

    def eval_stats(self):
        if self.mode == "global":
            return self.stats
        return self.running.as_dataset_stats() if self.running.steps else None


@dataclass
class TrainResult:
    network: object
    history: list
    data_stats: DatasetStats
    normalizer: DataNormalizer
    optimizer: OptimizerState


def _decayed_names(network):
    return {name for name in network.parameters() if name.endswith(".W")}


def _snapshot(network):
    return {name: p.copy() for name, p in network.named_parameters()}


def _restore(network, snapshot):
    for name, p in network.named_parameters():
        p[...] = snapshot[name]


def check_trainable(network, config):
    if network.uses_batch_statistics and config.batch_size < 2:
        raise UnsupportedConfigurationError(
            "batch normalization cannot be trained with batch size 1 because it normalizes by mini-batch "
            "statistics; use normprop with global data normalization instead"
        )
    if config.data_norm == "batch" and config.batch_size < 2:
        raise ConfigurationError("batch data normalization needs batch size >= 2; use data_norm=global")


def train(network, dataset, config, eval_set=None, monitor=None, checkpoint_path=None):
    """Train ``network`` in place; return a :class:`TrainResult`.

    Per batch: normalize inputs, forward, loss, backward, SGD step, then the
    unit-norm constraint on every layer that has it enabled. Per epoch: one
    metrics row and an optional ``monitor(epoch, network, data_stats)`` call.
    """
    check_trainable(network, config)
    X, y = dataset.X, dataset.y
    normalizer = DataNormalizer(config.data_norm, X.shape[1], config.running_decay).fit(X)
    schedule = Schedule(config.lr, config.halve_every)
    opt = OptimizerState(config.lr, config.momentum, config.weight_decay)
    decay = _decayed_names(network)
    constrained = [layer for layer in network.layers if layer.params and layer.l2_constraint]
    for layer in constrained:
        apply_l2_constraint(layer)
    rng = np.random.default_rng(config.seed)
    history = []
    last_good = _snapshot(network)
    n = len(dataset)
    bs = config.batch_size
    for epoch in range(config.epochs):
        opt.lr = schedule.lr_at(epoch)
        order = rng.permutation(n)
        starts = range(0, n, bs)
        total_loss, correct, seen = 0.0, 0, 0
        for start in starts:
            idx = order[start:start + bs]
            if len(idx) < 2 and bs >= 2:
                continue
            xb = normalizer.train_batch(X[idx])
            logits = network.forward(xb, train=True)
            loss, grad = loss_forward_backward(logits, y[idx])
            if not math.isfinite(loss):
                _restore(network, last_good)
                raise DivergenceError(f"non-finite loss at epoch {epoch + 1}", last_good=last_good)
            network.backward(grad)
            sgd_step(network.parameters(), network.gradients(), opt, decay)
            for layer in constrained:
                apply_l2_constraint(layer)
            total_loss += loss * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == y[idx]))
            seen += len(idx)
        stats = normalizer.eval_stats()
        eval_acc, _ = evaluate(network, eval_set if eval_set is not None else dataset, stats,
                               config.eval_batch_size)
        row = {
            "epoch": epoch + 1,
            "lr": opt.lr,
            "train_loss": total_loss / max(seen, 1),
            "train_acc": correct / max(seen, 1),
            "eval_acc": eval_acc,
        }
        history.append(row)
        log.debug("epoch %(epoch)d lr=%(lr)g loss=%(train_loss).4f acc=%(train_acc).4f eval=%(eval_acc).4f", row)
        if monitor is not None:
            monitor(epoch + 1, network, stats)
        last_good = _snapshot(network)
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, network, opt, normalizer, epoch + 1, rng)
    return TrainResult(network, history, normalizer.eval_stats(), normalizer, opt)


def evaluate(network, dataset, data_stats, batch_size=500):
    """Accuracy and mean loss with frozen parameters and frozen input statistics."""
    if data_stats is None:
        raise ConfigurationError("evaluation needs frozen data normalization statistics")
    correct, total_loss = 0, 0.0
    n = len(dataset)
    for start in range(0, n, batch_size):
        xb = apply_normalization(dataset.X[start:start + batch_size], data_stats)
        yb = dataset.y[start:start + batch_size]
        logits = network.forward(xb, train=False)
        loss, _ = loss_forward_backward(logits, yb)
        total_loss += loss * len(yb)
        correct += int(np.sum(np.argmax(logits, axis=1) == yb))
    return correct / n, total_loss / n


def save_checkpoint(path, network, optimizer, normalizer, epoch, rng):
    """Write all parameters, optimizer and normalization state, epoch and RNG state to an ``.npz`` file."""
    arrays = {f"param/{k}": v for k, v in network.named_parameters()}
    arrays.update({f"velocity/{k}": v for k, v in optimizer.velocity.items()})
    for layer_name, running in network.running_stats().items():
        arrays.update({f"running/{layer_name}/{k}": v for k, v in running.state().items()})
    if normalizer.stats is not None:
        arrays["data/mean"] = normalizer.stats.mean
        arrays["data/std"] = normalizer.stats.std
    if normalizer.running is not None:
        arrays.update({f"data_running/{k}": v for k, v in normalizer.running.state().items()})
    meta = {
        "version": CHECKPOINT_VERSION,
        "epoch": int(epoch),
        "architecture": [s.render() for s in network.specs],
        "input_shape": list(network.input_shape),
        "optimizer": {k: v for k, v in asdict(optimizer).items() if k != "velocity"},
        "data_norm": normalizer.mode,
        "rng": rng.bit_generator.state if rng is not None else None,
    }
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Read a checkpoint into ``{"meta": dict, "arrays": {name: ndarray}}``."""
    with np.load(path, allow_pickle=False) as npz:
        arrays = {k: npz[k] for k in npz.files}
    meta = json.loads(str(arrays.pop("meta")))
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint version {meta.get('version')}")
    return {"meta": meta, "arrays": arrays}


def restore_checkpoint(checkpoint, network, optimizer=None, normalizer=None):
    """Copy checkpointed state into existing objects; returns ``(epoch, rng)``."""
    arrays, meta = checkpoint["arrays"], checkpoint["meta"]
    for name, p in network.named_parameters():
        p[...] = arrays[f"param/{name}"]
    for layer_name, running in network.running_stats().items():
        prefix = f"running/{layer_name}/"
        running.load_state({k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)})
    if optimizer is not None:
        for k, v in meta["optimizer"].items():
            setattr(optimizer, k, v)
        optimizer.velocity = {k[len("velocity/"):]: v.copy() for k, v in arrays.items() if k.startswith("velocity/")}
    if normalizer is not None:
        if "data/mean" in arrays:
            normalizer.stats = DatasetStats(arrays["data/mean"].copy(), arrays["data/std"].copy(), 0)
        if normalizer.running is not None:
            normalizer.running.load_state({k[len("data_running/"):]: v for k, v in arrays.items()
                                           if k.startswith("data_running/")})
    rng = None
    if meta.get("rng") is not None:
        rng = np.random.default_rng()
        rng.bit_generator.state = meta["rng"]
    return meta["epoch"], rng
