import json
import subprocess
import sys

import pytest

from graphfuse.cli import main

TINY = """
seed = 3
fractions = [0.0, 0.1]

[generator]
height = 10
width = 10
samples = 10
seeds = 8

[network]
hidden = 8
heads = 2

[train]
epochs = 2
batch_size = 4
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "tiny.toml").write_text(TINY)
    return d


def run(d, *args):
    return main([*args, "--config", str(d / "tiny.toml"), "--out", str(d)])


@pytest.fixture(scope="module")
def trained(workdir):
    assert run(workdir, "generate") == 0
    assert run(workdir, "train", "--data", str(workdir / "dataset.gfuse")) == 0
    return workdir


def test_generate_train_sweep(trained):
    d = trained
    assert (d / "checkpoint.gfck").exists() and (d / "history.csv").exists()
    assert run(d, "sweep", "--data", str(d / "dataset.gfuse"), "--checkpoint", str(d / "checkpoint.gfck"), "--fractions", "0.01,0.05,0.1") == 0
    header, *rows = (d / "sweep.csv").read_text().splitlines()
    assert header.split(",")[:4] == ["fraction", "precision", "recall", "f1"]
    assert [r.split(",")[0] for r in rows] == ["0.01", "0.05", "0.1"]


def test_evaluate_writes_reports(trained):
    d = trained
    assert run(d, "evaluate", "--data", str(d / "dataset.gfuse"), "--checkpoint", str(d / "checkpoint.gfck"), "--fraction", "0.2") == 0
    metrics = json.loads((d / "metrics.json").read_text())
    assert metrics["fraction"] == 0.2 and metrics["split"] == "test" and metrics["seed"] == 3
    assert len((d / "confusion.csv").read_text().splitlines()) == 7


def test_fraction_out_of_range(trained, capsys):
    d = trained
    code = run(d, "evaluate", "--data", str(d / "dataset.gfuse"), "--checkpoint", str(d / "checkpoint.gfck"), "--fraction", "1.5")
    assert code != 0 and "[0, 1]" in capsys.readouterr().err


def test_inspect_graph(trained):
    d = trained
    assert run(d, "inspect-graph", "--data", str(d / "dataset.gfuse"), "--sample", "2", "--fraction", "0.05") == 0
    lines = (d / "graph.txt").read_text().splitlines()
    assert "nodes 105" in lines


@pytest.mark.parametrize(
    "args",
    [
        ["train", "--data", "missing.gfuse"],
        ["generate", "--bogus"],
        ["inspect-graph", "--data", "DATA", "--sample", "99"],
        ["frobnicate"],
    ],
)
def test_errors_exit_nonzero(trained, args):
    args = [str(trained / "dataset.gfuse") if a == "DATA" else a for a in args]
    assert run(trained, *args) != 0


def test_invalid_config(tmp_path, capsys):
    (tmp_path / "bad.toml").write_text("[train]\nlearning_rate = 0.1\n")
    assert main(["generate", "--config", str(tmp_path / "bad.toml"), "--out", str(tmp_path)]) == 1
    assert "learning_rate" in capsys.readouterr().err


def test_repeat_runs_are_byte_identical(tmp_path):
    outputs = []
    for name in ("a", "b"):
        d = tmp_path / name
        d.mkdir()
        (d / "tiny.toml").write_text(TINY)
        assert run(d, "generate") == 0
        assert run(d, "train", "--data", str(d / "dataset.gfuse")) == 0
        assert run(d, "sweep", "--data", str(d / "dataset.gfuse"), "--checkpoint", str(d / "checkpoint.gfck")) == 0
        outputs.append({f: (d / f).read_bytes() for f in ("dataset.gfuse", "checkpoint.gfck", "history.csv", "sweep.csv", "sweep.json")})
    assert outputs[0] == outputs[1]


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "graphfuse", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "compare-construction" in proc.stdout
