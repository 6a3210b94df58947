import subprocess
import sys

import pytest
import yaml

from fairrobust.cli import build_parser, main

TINY = {
    "name": "tiny",
    "data": {"source": "synth", "n_total": 400},
    "noise": {"rates": [0.1], "mode": "adversarial"},
    "methods": ["LR", "ITLM", "Ours"],
    "metric": "EO",
    "seeds": [1],
    "train": {"tau": 0.9, "alpha": 0.001, "epochs": 5, "warm_start_epochs": 2, "batch_size": 50,
              "learning_rate": 0.01},
}


@pytest.fixture
def tiny_config(tmp_path):
    p = tmp_path / "tiny.yaml"
    p.write_text(yaml.safe_dump(TINY))
    return str(p)


def test_synth_reproducible(tmp_path, capsys):
    assert main(["synth", "--n", "300", "--seed", "4", "--out", str(tmp_path / "a")]) == 0
    assert main(["synth", "--n", "300", "--seed", "4", "--out", str(tmp_path / "b.csv")]) == 0
    a = (tmp_path / "a" / "synthetic_n300_seed4.csv").read_bytes()
    assert a == (tmp_path / "b.csv").read_bytes()
    assert len(a.decode().splitlines()) == 301


def test_run_writes_table(tiny_config, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", tiny_config, "--out", str(out), "--seeds", "1,2", "--metric", "dp"]) == 0
    text = capsys.readouterr().out
    assert "DP Disp." in text and "ITLM" in text
    assert (out / "table.csv").exists() and len(list((out / "runs").glob("*.csv"))) == 6


def test_run_flag_overrides(tiny_config, tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["run", "--config", tiny_config, "--out", str(out), "--method", "LR,FB", "--noise-rate", "0.05",
                 "--noise-mode", "group_targeted", "--target-group", "y0z1", "--jobs", "2"])
    assert code == 0
    resolved = yaml.safe_load((out / "resolved_config.yaml").read_text())
    assert resolved["methods"] == ["LR", "FB"] and resolved["noise"]["rates"] == [0.05]
    assert resolved["noise"]["mode"] == "group_targeted" and resolved["noise"]["target_group"] == "y0z1"


def test_failed_runs_exit_1(tiny_config, capsys):
    # the small y1z0 group is flipped entirely, leaving FB an empty group to sample
    code = main(["run", "--config", tiny_config, "--method", "FB", "--noise-rate", "0.05",
                 "--noise-mode", "group_targeted", "--target-group", "y1z0"])
    assert code == 1 and "FAILED" in capsys.readouterr().err


def test_sweep_noise_rate(tiny_config, tmp_path, capsys):
    out = tmp_path / "sw"
    assert main(["sweep", "--config", tiny_config, "--out", str(out), "--axis", "noise_rate",
                 "--values", "0.1,0.15,0.2", "--method", "LR,Ours"]) == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert len(lines) == 1 + 3 * 2


def test_sweep_integer_axis(tiny_config, tmp_path, capsys):
    assert main(["sweep", "--config", tiny_config, "--axis", "epochs", "--values", "3,4", "--method", "LR"]) == 0
    assert "epochs = 3" in capsys.readouterr().out


def test_config_errors_exit_2(tmp_path, tiny_config, capsys):
    assert main(["run", "--config", "no_such_config"]) == 2
    assert main(["run", "--config", tiny_config, "--method", "LR,Bogus"]) == 2
    assert "error:" in capsys.readouterr().err


def test_argument_errors():
    parser = build_parser()
    with pytest.raises(SystemExit):
        parser.parse_args(["run", "--config", "x", "--seeds", "1,a"])
    with pytest.raises(SystemExit):
        parser.parse_args(["run", "--config", "x", "--target-group", "y2z0"])
    with pytest.raises(SystemExit):
        parser.parse_args(["run", "--config", "x", "--metric", "acc"])
    args = parser.parse_args(["run", "--config", "x", "--metric", "EO", "--seeds", "1,2,3,4,5"])
    assert args.metric == "eo" and args.seeds == [1, 2, 3, 4, 5]


def test_selftest_quick(capsys):
    code = main(["selftest", "--quick"])
    lines = capsys.readouterr().out.splitlines()
    assert code == 0
    assert len(lines) == 6 and all(l.startswith("PASS") for l in lines)


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "fairrobust.cli", "synth", "--n", "50", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip().endswith("synthetic_n50_seed0.csv")
