import csv
import io
import subprocess
import sys

import pytest

from fac import nn
from fac.cli import main
from fac.core import make_rng


def write_config(tmp_path, extra=""):
    p = tmp_path / "c.toml"
    p.write_text(f"""
[env]
name = "point-reach"

[fac]
batch_size = 32
hidden = 8
seed_frames = 200

[run]
name = "cli"
seeds = [0, 1]
total_frames = 400
eval_interval = 200
eval_episodes = 2
output_dir = "{tmp_path / 'out'}"
{extra}""")
    return p


def test_train_and_report(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["train", "--config", str(cfg), "--seed-override", "7"]) == 0
    assert (tmp_path / "out" / "7" / "metrics.csv").exists()
    assert not (tmp_path / "out" / "0").exists()
    assert main(["report", str(tmp_path / "out")]) == 0
    out = capsys.readouterr().out
    assert "final_success" in out and "auc" in out
    assert (tmp_path / "out" / "report.csv").exists()


def test_eval_checkpoint(tmp_path, capsys):
    p = nn.init_mlp(make_rng(0), [4, 8, 2], "tanh")
    nn.save_checkpoint(p, tmp_path / "a.bin")
    assert main(["eval", "--checkpoint", str(tmp_path / "a.bin"), "--env", "point-reach", "--episodes", "3"]) == 0
    assert "success rate" in capsys.readouterr().out
    assert main(["eval", "--checkpoint", str(tmp_path / "a.bin"), "--env", "point-pick-place"]) == 2


def test_bad_config_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, "alpa = 1\n")
    assert main(["train", "--config", str(cfg)]) == 2
    assert "alpa" in capsys.readouterr().err


def test_report_empty_dir(tmp_path, capsys):
    assert main(["report", str(tmp_path)]) == 2


def test_verify_shaping_csv(capsys):
    assert main(["verify", "shaping", "--instances", "4", "--max-states", "6", "--seed", "2"]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == ["seed", "n_states", "n_actions", "max_q_deviation", "policy_agreement"]
    assert len(rows) == 5 and all(r[4] == "True" for r in rows[1:])


def test_verify_mixing_to_file(tmp_path):
    out = tmp_path / "m.csv"
    assert main(["verify", "mixing", "--instances", "20", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 21


def test_ablate_priors_suite(tmp_path, capsys):
    cfg = write_config(tmp_path)
    cfg.write_text(cfg.read_text().replace("seeds = [0, 1]", "seeds = [0]"))
    assert main(["ablate", "--suite", "priors", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    for name in ["full", "no-policy", "no-value", "no-reward", "no-success-buffer"]:
        assert name in out


def test_console_script_module_entry():
    res = subprocess.run([sys.executable, "-m", "fac.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "verify" in res.stdout


def test_unknown_subcommand():
    with pytest.raises(SystemExit):
        main(["dance"])
