"""``normprop`` command-line entry point.

Subcommands write CSV files (to ``--out`` or stdout). Every CSV starts with a
``# config_hash=... seed=...`` comment line followed by a header row. On
failure a single ``error: <category>: <message>`` line goes to stderr and the
exit status is non-zero.
"""

import argparse
import hashlib
import json
import logging
import math
import os
import sys

import numpy as np

from .activations import get_activation, jacobian_factor, monte_carlo_stats, stats_for
from .analysis import canonical_gap, jacobian_probe, write_csv
from .config import ExperimentConfig, load_config
from .exceptions import ConfigurationError, FormatError, NormPropError
from .experiments import VARIANTS, run_compare, run_shift, run_training
from .layers import NormPropDense

log = logging.getLogger("normprop")

METRIC_FIELDS = ["epoch", "lr", "train_loss", "train_acc", "eval_acc"]
EXIT_USAGE = 2
EXIT_FAILURE = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _seed(args):
    env = os.environ.get("NORMPROP_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise ConfigurationError(f"NORMPROP_SEED must be an integer, got {env!r}") from None
    return args.seed


def _activation_token(text):
    try:
        get_activation(text)
    except ConfigurationError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return text


def _args_hash(args, seed):
    payload = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out")}
    payload["seed"] = seed
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _emit(args, name, rows, fields, config_hash, seed):
    comment = f"config_hash={config_hash} seed={seed}"
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, name)
        write_csv(path, rows, fields, comment)
        log.info("wrote %s", path)
    else:
        write_csv(sys.stdout, rows, fields, comment)


def cmd_stats(args):
    seed = _seed(args)
    act = get_activation(args.act, args.a)
    rows = []
    analytic = None
    if act.kind in ("relu", "prelu", "identity"):
        st = stats_for(act)
        jf = jacobian_factor(act, st, method="analytic")
        analytic = {"source": "analytic", "c2": st.c2, "c1": st.c1, "jacobian_factor": jf}
        rows.append(analytic)
    mc = monte_carlo_stats(act, args.mc, seed)
    mc_jf = jacobian_factor(act, mc, args.mc, seed, method="monte_carlo")
    mc_row = {"source": "monte_carlo", "c2": mc.c2, "c1": mc.c1, "jacobian_factor": mc_jf}
    rows.append(mc_row)
    # standard error of the mean, used to judge the Monte Carlo agreement
    rows.append({"source": "std_error", "c2": mc.c1 / math.sqrt(args.mc), "c1": None, "jacobian_factor": None})
    if analytic is not None:
        rows.append({"source": "abs_diff", **{k: abs(analytic[k] - mc_row[k]) for k in ("c2", "c1", "jacobian_factor")}})
    rows = [{k: ("" if v is None else v) for k, v in r.items()} for r in rows]
    _emit(args, "stats.csv", rows, ["source", "c2", "c1", "jacobian_factor"], _args_hash(args, seed), seed)


def random_weights(kind, m, n, rng):
    if kind == "gaussian":
        return rng.standard_normal((m, n))
    if kind == "orthogonal":
        if m > n:
            raise ConfigurationError(f"orthogonal rows need m <= n, got m={m}, n={n}")
        q, _ = np.linalg.qr(rng.standard_normal((n, m)))
        return q.T.copy()
    if kind == "duplicated":
        W = rng.standard_normal((m, n))
        W /= np.linalg.norm(W, axis=1, keepdims=True)
        W[1] = W[0]
        return W
    raise ConfigurationError(f"unknown weight kind {kind!r}")


def _read_weights(path):
    try:
        if path.endswith(".npy"):
            W = np.load(path, allow_pickle=False)
        else:
            W = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read weights from {path}: {exc}") from None
    if W.ndim != 2:
        raise FormatError(f"{path}: expected a 2-d weight matrix, got shape {W.shape}")
    return W.astype(np.float64)


def cmd_bound(args):
    seed = _seed(args)
    rng = np.random.default_rng(seed)
    if args.weights:
        mats = [("file", _read_weights(args.weights))]
    else:
        m, n = args.random
        mats = [(args.kind, random_weights(args.kind, m, n, rng)) for _ in range(args.trials)]
    rows = []
    for trial, (kind, W) in enumerate(mats):
        x = args.sigma * rng.standard_normal((args.samples, W.shape[1]))
        report = canonical_gap(x @ W.T, W, args.sigma)
        row = {"trial": trial, "kind": kind, "n": W.shape[1], **report.row()}
        row["within_bound"] = int(report.gap <= report.bound + row["tolerance"])
        rows.append(row)
    fields = ["trial", "kind", "m", "n", "n_samples", "coherence", "bound", "gap", "gap_empirical_optimum",
              "tolerance", "within_bound"]
    _emit(args, "bound.csv", rows, fields, _args_hash(args, seed), seed)


def cmd_jacobian(args):
    seed = _seed(args)
    rng = np.random.default_rng(seed)
    W = random_weights("orthogonal", args.m, args.n, rng)
    x = rng.standard_normal((args.samples, args.n))
    rows = []
    for label, gamma in (("1", 1.0), ("1/1.21", 1 / 1.21)):
        layer = NormPropDense(W, gamma=np.full(args.m, gamma))
        mean_jjt, sv = jacobian_probe(layer, x)
        off = mean_jjt - np.diag(np.diag(mean_jjt))
        rows.append({
            "gamma": label,
            "diag_mean": float(np.mean(np.diag(mean_jjt))),
            "offdiag_max": float(np.abs(off).max()),
            "sv_min": float(sv.min()),
            "sv_mean": float(sv.mean()),
            "sv_max": float(sv.max()),
        })
    fields = ["gamma", "diag_mean", "offdiag_max", "sv_min", "sv_mean", "sv_max"]
    _emit(args, "jacobian.csv", rows, fields, _args_hash(args, seed), seed)


def _experiment_config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    for attr, key in (("norm", "norm"), ("data_norm", "data_norm"), ("batch_size", "batch_size"),
                      ("epochs", "epochs"), ("lr", "lr"), ("seeds", "seeds")):
        value = getattr(args, attr, None)
        if value is not None:
            changes[key] = value
    seed = _seed(args)
    if seed is not None:
        changes["seed"] = seed
    if args.out:
        changes["out"] = args.out
    cfg = cfg.replace(**changes)
    return cfg.validate()


def _out_dir(cfg):
    os.makedirs(cfg.out, exist_ok=True)
    return cfg.out


def cmd_train(args):
    cfg = _experiment_config(args)
    out = _out_dir(cfg)
    result, _ = run_training(cfg, checkpoint_path=os.path.join(out, "checkpoint.npz"))
    comment = f"config_hash={cfg.hash} seed={cfg.seed}"
    write_csv(os.path.join(out, "metrics.csv"), result.history, METRIC_FIELDS, comment)
    with open(os.path.join(out, "config.txt"), "w") as fh:
        fh.write(cfg.render())
    final = result.history[-1] if result.history else {}
    print(f"trained {cfg.norm} for {cfg.epochs} epochs: eval_acc={final.get('eval_acc', float('nan')):.4f}")


def cmd_shift(args):
    cfg = _experiment_config(args)
    out = _out_dir(cfg)
    comment = f"config_hash={cfg.hash} seed={cfg.seed}"
    for variant, (_, monitor) in run_shift(cfg).items():
        write_csv(os.path.join(out, f"shift_{variant}.csv"), monitor.rows(), ["layer", "unit", "epoch", "mean"],
                  comment)
    print(f"wrote shift traces for {', '.join(VARIANTS)} to {out}")


def cmd_compare(args):
    cfg = _experiment_config(args)
    out = _out_dir(cfg)
    rows = run_compare(cfg)
    fields = ["seed", "epoch", "normprop_eval_acc", "batchnorm_eval_acc", "normprop_train_loss",
              "batchnorm_train_loss"]
    write_csv(os.path.join(out, "compare.csv"), rows, fields, f"config_hash={cfg.hash} seed={cfg.seed}")
    print(f"wrote {len(rows)} comparison rows to {out}")


def build_parser():
    parser = _Parser(prog="normprop", description="Normalization Propagation experiments and checks")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("stats", help="activation mean/std and Jacobian factor, analytic vs. simulated")
    p.add_argument("--act", type=_activation_token, default="relu")
    p.add_argument("--a", type=float, default=None, help="PReLU slope")
    p.add_argument("--mc", type=int, default=1_000_000, help="Monte Carlo samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("bound", help="canonical covariance bound vs. measured gap")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--weights", help="weight matrix as .npy or comma-separated text")
    src.add_argument("--random", type=int, nargs=2, metavar=("M", "N"))
    p.add_argument("--kind", choices=("gaussian", "orthogonal", "duplicated"), default="gaussian")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("jacobian", help="average Jacobian of a NormProp dense layer")
    p.add_argument("--m", type=int, default=16)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_jacobian)

    for name, func, text in (("train", cmd_train, "train one network"),
                             ("shift", cmd_shift, "hidden-input mean traces for normprop, batchnorm and none"),
                             ("compare", cmd_compare, "NormProp vs. BN eval accuracy per epoch")):
        p = sub.add_parser(name, help=text)
        p.add_argument("config", nargs="?", help="key=value experiment config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--data-norm", dest="data_norm", choices=("global", "batch"))
        p.add_argument("--lr", type=float)
        p.add_argument("--out")
        if name == "train":
            p.add_argument("--norm", choices=VARIANTS)
        if name == "compare":
            p.add_argument("--seeds", type=int, help="number of consecutive seeds")
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except NormPropError as exc:
        print(f"error: {exc.category}: {' '.join(str(exc).split())}", file=sys.stderr)
        return EXIT_FAILURE
    return 0


if __name__ == "__main__":
    sys.exit(main())
