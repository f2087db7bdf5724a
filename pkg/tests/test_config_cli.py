import numpy as np
import pytest

from normprop.cli import main
from normprop.config import ExperimentConfig, load_config, parse_config
from normprop.exceptions import ConfigurationError

SMALL = """\
# tiny synthetic run
n_samples=200
dim=6
epochs=2
layer=D(8)
layer=D(8)
layer=D(2)
"""


def test_config_round_trip():
    cfg = parse_config(SMALL)
    assert cfg.layers == ["D(8)", "D(8)", "D(2)"] and cfg.epochs == 2
    again = parse_config(cfg.render())
    assert again == cfg and again.hash == cfg.hash


def test_config_errors(tmp_path):
    with pytest.raises(ConfigurationError, match="unknown key"):
        parse_config("colour=red")
    with pytest.raises(ConfigurationError, match="line 1"):
        parse_config("epochs")
    with pytest.raises(ConfigurationError, match="bad value"):
        parse_config("epochs=ten")
    with pytest.raises(ConfigurationError):
        parse_config("norm=layernorm")
    with pytest.raises(ConfigurationError, match="cannot read"):
        load_config(tmp_path / "missing.txt")
    with pytest.raises(ConfigurationError, match="does not exist"):
        ExperimentConfig(data="csv", data_path=str(tmp_path / "nope.csv")).validate()


def test_baseline_uses_its_own_learning_rate():
    cfg = ExperimentConfig(lr=0.05, baseline_lr=0.01)
    assert cfg.train_config("none").lr == 0.01
    assert cfg.train_config("batchnorm").lr == 0.05


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_stats_subcommand(capsys):
    code, out, _ = run(["stats", "--act", "relu", "--mc", "100000"], capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[0].startswith("# config_hash=") and lines[1] == "source,c2,c1,jacobian_factor"
    assert lines[2].startswith("analytic,0.3989422804014327,")


def test_usage_and_domain_errors(capsys, tmp_path):
    code, _, err = run(["stats", "--act", "softsign"], capsys)
    assert code == 2 and err.startswith("error: usage:")
    code, _, err = run(["bound", "--random", "9", "4", "--kind", "orthogonal"], capsys)
    assert code == 1 and err.strip() == "error: configuration: orthogonal rows need m <= n, got m=9, n=4"
    bad = tmp_path / "w.csv"
    bad.write_text("1,2\n3\n")
    code, _, err = run(["bound", "--weights", str(bad)], capsys)
    assert code == 1 and err.startswith("error: format: cannot read weights")
    assert len(err.strip().splitlines()) == 1


def test_bound_from_weights_file(capsys, tmp_path):
    path = tmp_path / "w.npy"
    np.save(path, np.eye(4))
    code, out, _ = run(["bound", "--weights", str(path), "--samples", "20000"], capsys)
    assert code == 0
    header, row = out.splitlines()[1:3]
    values = dict(zip(header.split(","), row.split(",")))
    assert float(values["bound"]) == 0.0 and values["within_bound"] == "1"


def test_seed_environment_override(capsys, monkeypatch):
    monkeypatch.setenv("NORMPROP_SEED", "5")
    _, out, _ = run(["jacobian", "--samples", "1000"], capsys)
    assert "seed=5" in out.splitlines()[0]
    monkeypatch.setenv("NORMPROP_SEED", "five")
    code, _, err = run(["jacobian", "--samples", "1000"], capsys)
    assert code == 1 and "NORMPROP_SEED" in err


def test_train_writes_outputs(tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text(SMALL)
    out = tmp_path / "run"
    code, stdout, _ = run(["train", str(cfg), "--out", str(out), "--seed", "1"], capsys)
    assert code == 0 and "eval_acc=" in stdout
    metrics = (out / "metrics.csv").read_text().splitlines()
    assert metrics[1] == "epoch,lr,train_loss,train_acc,eval_acc" and len(metrics) == 4
    assert parse_config((out / "config.txt").read_text()).seed == 1
    assert (out / "checkpoint.npz").exists()


def test_train_missing_data_file(tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text("data=idx\ndata_path=/nonexistent/images\nlabels_path=/nonexistent/labels\n")
    code, _, err = run(["train", str(cfg), "--out", str(tmp_path / "o")], capsys)
    assert code == 1 and err.startswith("error: configuration: data_path=")


def test_compare_and_shift_outputs(tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text(SMALL)
    out = tmp_path / "o"
    assert run(["compare", str(cfg), "--out", str(out), "--seeds", "2"], capsys)[0] == 0
    rows = (out / "compare.csv").read_text().splitlines()
    assert len(rows) == 2 + 2 * 2
    assert run(["shift", str(cfg), "--out", str(out)], capsys)[0] == 0
    for variant in ("normprop", "batchnorm", "none"):
        lines = (out / f"shift_{variant}.csv").read_text().splitlines()
        assert lines[1] == "layer,unit,epoch,mean" and len(lines) == 2 + 2 * 2


@pytest.mark.parametrize("name", ["mixture_dense.txt", "mnist_conv.txt", "cifar_nin.txt"])
def test_shipped_configs_parse_and_build(name):
    from pathlib import Path

    from normprop.network import build_network

    cfg = load_config(Path(__file__).parent.parent / "configs" / name)
    shape = {"synthetic": (cfg.dim,), "idx": (1, 28, 28), "cifar": (3, 32, 32)}[cfg.data]
    net = build_network(cfg.layers, shape, seed=0)
    out = shape
    for layer in net.layers:
        out = layer.output_shape(out)
    assert out == (cfg.classes if cfg.data == "synthetic" else 10,)
