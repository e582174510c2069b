import csv
import subprocess
import sys

import pytest

from lps.cli import main
from lps.train import parse_config, read_metrics

CONFIG = "K=4\nD=3\nsamples_per_class=20\nepochs=2\nbatch_size=16\n"


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(CONFIG)
    return path


def test_train_writes_all_outputs(tmp_path, config):
    out = tmp_path / "run"
    assert main(["train", "--config", str(config), "--seed", "3", "--no-uc", "--out", str(out)]) == 0
    for name in ("metrics.jsonl", "summary.csv", "checkpoint.bin", "config.echo"):
        assert (out / name).exists()
    echo = parse_config((out / "config.echo").read_text())
    assert echo.no_uc and not echo.no_am
    assert (echo.data_seed, echo.init_seed, echo.batch_seed) == (3, 3, 3)
    assert len(read_metrics(out / "metrics.jsonl")) == 3


def test_set_overrides_config(tmp_path, config):
    out = tmp_path / "run"
    assert main(["train", "--config", str(config), "--set", "epochs=0", "--out", str(out)]) == 0
    assert len(read_metrics(out / "metrics.jsonl")) == 1


def test_train_is_deterministic(tmp_path, config):
    for d in ("a", "b"):
        main(["train", "--config", str(config), "--seed", "1", "--out", str(tmp_path / d)])
    assert (tmp_path / "a" / "metrics.jsonl").read_bytes() == (tmp_path / "b" / "metrics.jsonl").read_bytes()


def test_sweep(tmp_path, config, capsys):
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", str(config), "--grid", "tau=0.2,0.3,0.4,0.5,0.6", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "sweep.csv")))
    assert len(rows) == 5 and list(rows[0]) == ["tau", "seen_acc", "novel_acc", "all_acc", "status"]
    assert "tau,seen_acc" in capsys.readouterr().out


def test_sweep_empty_grid_fails(tmp_path, config, capsys):
    assert main(["sweep", "--config", str(config), "--grid", "", "--out", str(tmp_path)]) == 2
    assert "empty parameter grid" in capsys.readouterr().err


def test_generate_then_dump(tmp_path, config, capsys):
    data = tmp_path / "d.csv"
    assert main(["generate", "--config", str(config), "--out", str(data)]) == 0
    assert data.with_suffix(".meta").exists()
    run = tmp_path / "run"
    main(["train", "--config", str(config), "--set", "source=file", "--set", f"data_path={data}",
          "--out", str(run)])
    capsys.readouterr()
    assert main(["dump", "--checkpoint", str(run / "checkpoint.bin"), "--data", str(data), "--split", "test"]) == 0
    rows = list(csv.reader(capsys.readouterr().out.splitlines()))
    assert rows[0][:3] == ["id", "label", "pred"] and len(rows) == 1 + 4 * 4


def test_ablate(tmp_path, config):
    out = tmp_path / "abl"
    assert main(["ablate", "--config", str(config), "--seeds", "0", "--out", str(out)]) == 0
    assert len(list(csv.DictReader(open(out / "ablation.csv")))) == 5


@pytest.mark.parametrize("argv", [
    ["train", "--config", "/nonexistent/cfg"],
    ["train", "--set", "epochs"],
    ["train", "--set", "unknown_key=1"],
    ["dump", "--checkpoint", "/nonexistent/c.bin", "--data", "/nonexistent/d.csv"],
])
def test_errors_exit_nonzero(argv, tmp_path, capsys):
    assert main(argv + (["--out", str(tmp_path)] if argv[0] == "train" else [])) == 2
    assert capsys.readouterr().err.startswith("lps: error:")


def test_console_entry_point(tmp_path, config):
    proc = subprocess.run([sys.executable, "-m", "lps.cli", "train", "--config", str(config),
                           "--set", "epochs=0", "--out", str(tmp_path / "r")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
