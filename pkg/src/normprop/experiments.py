"""Desk-scale experiment runners shared by the CLI and the acceptance tests."""

import numpy as np

from .analysis import ShiftMonitor
from .data import load_cifar, load_csv, load_idx, synth_gaussian
from .exceptions import ConfigurationError
from .network import build_network, parse_architecture
from .training import train

VARIANTS = ("normprop", "batchnorm", "none")


def load_dataset(cfg):
    if cfg.data == "synthetic":
        return synth_gaussian(cfg.n_samples, cfg.dim, cfg.data_seed, cfg.task, classes=cfg.classes)
    cfg.validate()
    if cfg.data == "idx":
        return load_idx(cfg.data_path, cfg.labels_path)
    if cfg.data == "csv":
        return load_csv(cfg.data_path, cfg.label_column)
    return load_cifar(cfg.data_path)


def input_shape_for(cfg, dataset):
    specs = parse_architecture(cfg.layers)
    if specs[0].kind in "CP":
        if dataset.image_shape is None:
            raise ConfigurationError(f"{specs[0].render()} needs image data, but {cfg.data} data is flat")
        return dataset.image_shape
    return (dataset.X.shape[1],)


def make_network(cfg, dataset, norm=None, seed=None):
    specs = parse_architecture(cfg.layers)
    return build_network(
        specs,
        input_shape_for(cfg, dataset),
        norm=norm or cfg.norm,
        activation=cfg.activation,
        seed=cfg.seed if seed is None else seed,
        gamma_init=cfg.gamma_init,
        constrain_output=cfg.constrain_output,
        bn_decay=cfg.running_decay,
    )


def prepare(cfg):
    dataset = load_dataset(cfg)
    train_set, eval_set = dataset.split(cfg.eval_fraction, seed=cfg.data_seed)
    if len(eval_set) == 0:
        eval_set = train_set
    return train_set, eval_set


def run_training(cfg, norm=None, seed=None, data=None, monitor=False, checkpoint_path=None):
    """Train one network; returns ``(TrainResult, ShiftMonitor or None)``."""
    train_set, eval_set = data if data is not None else prepare(cfg)
    seed = cfg.seed if seed is None else seed
    net = make_network(cfg, train_set, norm=norm, seed=seed)
    n_classes = max(train_set.n_classes, eval_set.n_classes)
    logits = int(np.prod(_output_shape(net)))
    if logits < n_classes:
        raise ConfigurationError(f"network emits {logits} logits but the data has {n_classes} classes")
    mon = None
    if monitor:
        mon = ShiftMonitor(net, eval_set.X[: cfg.probe_size], seed=seed)
    result = train(net, train_set, cfg.train_config(norm=norm, seed=seed), eval_set=eval_set, monitor=mon,
                   checkpoint_path=checkpoint_path)
    return result, mon


def _output_shape(net):
    shape = net.input_shape
    for layer in net.layers:
        shape = layer.output_shape(shape)
    return shape


def run_shift(cfg, seed=None, data=None):
    """Train the three variants with matched seeds; returns ``{variant: (TrainResult, ShiftMonitor)}``."""
    data = data if data is not None else prepare(cfg)
    return {v: run_training(cfg, norm=v, seed=seed, data=data, monitor=True) for v in VARIANTS}


def run_compare(cfg, seeds=None, data=None):
    """NormProp vs. BN eval accuracy per epoch; one row per (seed, epoch)."""
    data = data if data is not None else prepare(cfg)
    seeds = list(range(cfg.seed, cfg.seed + cfg.seeds)) if seeds is None else list(seeds)
    rows = []
    for seed in seeds:
        hist = {v: run_training(cfg, norm=v, seed=seed, data=data)[0].history for v in ("normprop", "batchnorm")}
        for a, b in zip(hist["normprop"], hist["batchnorm"]):
            rows.append({
                "seed": seed,
                "epoch": a["epoch"],
                "normprop_eval_acc": a["eval_acc"],
                "batchnorm_eval_acc": b["eval_acc"],
                "normprop_train_loss": a["train_loss"],
                "batchnorm_train_loss": b["train_loss"],
            })
    return rows


def terminal_abs_mean(monitor):
    """Mean over monitored layers of ``|input mean|`` at the last recorded epoch."""
    return float(np.mean([abs(t.means[-1][1]) for t in monitor.traces]))


def late_trace_std(monitor, last=10):
    """Mean over monitored layers of the trace standard deviation over the last ``last`` epochs."""
    return float(np.mean([np.std(t.values[-last:]) for t in monitor.traces]))
