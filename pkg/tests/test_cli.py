import csv
import io
import subprocess
import sys

import numpy as np
import pytest

from noregret_rmdp.cli import main
from noregret_rmdp.environments import random_mdp
from noregret_rmdp.harness import read_summary
from noregret_rmdp.mdp_core import PolicyParams, dumps_policy, save_mdp

EXP = ["--env", "random", "--rounds", "12", "--oracle-iters", "30", "--eval-stride", "1", "--reference-rounds", "10",
       "--eta-pi", "1.0"]


@pytest.fixture
def files(tmp_path):
    mdp, w = random_mdp(3, 2, 0.9, 1)
    save_mdp(tmp_path / "m.txt", mdp, w)
    (tmp_path / "p.txt").write_text(dumps_policy(PolicyParams.uniform(3, 2)))
    return tmp_path


def rows(text):
    return list(csv.reader(io.StringIO(text)))


def test_run_uses_first_sweep_values(tmp_path, capsys):
    out = tmp_path / "r"
    assert main(["run", *EXP, "--q", "1", "--q", "2", "--out", str(out)]) == 0
    assert capsys.readouterr().out.strip() == str(out / "summary.csv")
    summary = read_summary(out / "summary.csv")
    assert len(summary) == 1 and summary[0]["q"] == "1"


def test_sweep_writes_every_point(tmp_path, capsys):
    out = tmp_path / "s"
    assert main(["sweep", *EXP, "--tau", "0.1", "--tau", "0.3", "--seed", "0", "--seed", "1", "--out", str(out)]) == 0
    assert len(read_summary(out / "summary.csv")) == 4
    assert "slope=" in capsys.readouterr().err


def test_config_file_and_line_error(tmp_path, capsys):
    good = tmp_path / "good.txt"
    good.write_text("env = random\nrounds = 12\noracle_iters = 30\neval_stride = 1\nreference_rounds = 0\n")
    assert main(["run", "--config", str(good), "--out", str(tmp_path / "o")]) == 0
    bad = tmp_path / "bad.txt"
    bad.write_text("rounds = 3\n\nfoo = 1\n")
    assert main(["run", "--config", str(bad)]) == 2
    assert "line 3" in capsys.readouterr().err


def test_eval_robust(files, capsys):
    assert main(["eval-robust", "--mdp", str(files / "m.txt"), "--policy", str(files / "p.txt"),
                 "--q", "1", "--tau", "0.0", "--tau", "0.3", "--restarts", "1"]) == 0
    table = rows(capsys.readouterr().out)
    assert table[0] == ["q", "tau", "robust_value"]
    assert float(table[1][2]) >= float(table[2][2])


@pytest.mark.parametrize("form", ["printed", "std"])
def test_sample_alloc(files, capsys, form):
    assert main(["sample-alloc", "--mdp", str(files / "m.txt"), "--policy", str(files / "p.txt"), "--budget", "90",
                 "--bound-form", form]) == 0
    captured = capsys.readouterr()
    table = rows(captured.out)
    assert table[0] == ["state_index", "weight", "h", "per_state_bound_term"]
    assert sum(float(r[2]) for r in table[1:]) == pytest.approx(90.0)
    assert f"form={form}" in captured.err


def test_sample_alloc_parse_error(files, capsys):
    text = dumps_policy(PolicyParams.uniform(3, 2)).replace("0.5", "oops", 1)
    (files / "p.txt").write_text(text)
    assert main(["sample-alloc", "--mdp", str(files / "m.txt"), "--policy", str(files / "p.txt"),
                 "--budget", "9"]) == 2
    assert "line" in capsys.readouterr().err


def test_fit_rate(tmp_path, capsys):
    trace = tmp_path / "t.csv"
    t = np.arange(1, 41)
    with open(trace, "w") as fh:
        fh.write("round,robust_value\n")
        for i in t:
            fh.write(f"{i},{float(1 - 2 / np.sqrt(i))!r}\n")
    assert main(["fit-rate", str(trace), "--reference", "1.0"]) == 0
    table = rows(capsys.readouterr().out)
    assert table[0][:2] == ["slope", "r2"]
    assert float(table[1][0]) == pytest.approx(-0.5, abs=1e-9)


def test_missing_file_exit_code(tmp_path, capsys):
    assert main(["fit-rate", str(tmp_path / "none.csv")]) == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "noregret_rmdp", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("run", "sweep", "eval-robust", "sample-alloc", "fit-rate"):
        assert cmd in res.stdout
