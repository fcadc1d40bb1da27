import json
import subprocess
import sys

import pytest
import yaml

from qdecay import cli
from qdecay.errors import NumericFailureError

from conftest import small_config

SMALL_PR = ["pr-compare", "--n-grid", "200,400", "--B", "20", "--seed", "7"]


def test_subcommand_writes_outputs(tmp_path, capsys):
    out = tmp_path / "pr"
    assert cli.main(SMALL_PR + ["--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "PASS  tail < full at n=400" in text and f"wrote {out}" in text
    names = sorted(p.name for p in out.iterdir())
    assert names == ["pr_compare.csv", "pr_series.csv", "pr_series.svg", "report.json", "run_info.json"]
    info = json.loads((out / "run_info.json").read_text())
    assert info["threads"] == 1 and "started" in info


def test_reports_independent_of_threads(tmp_path):
    cli.main(SMALL_PR + ["--out", str(tmp_path / "a"), "--quiet"])
    cli.main(SMALL_PR + ["--out", str(tmp_path / "b"), "--threads", "4", "--quiet"])
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()


def test_run_config_file(tmp_path):
    cfg = small_config("bounds_check", out=str(tmp_path / "bc"))
    path = tmp_path / "bc.yaml"
    path.write_text(yaml.safe_dump(cfg.to_dict()))
    assert cli.main(["run", str(path), "--check"]) == 0
    rep = json.loads((tmp_path / "bc" / "report.json").read_text())
    assert rep["scalars"]["lemma_violations"] == 0


def test_overrides(tmp_path):
    out = tmp_path / "o"
    argv = ["compare-schedules", "--n", "120", "--B", "3", "--schedule", "const:0.05", "--schedule", "pd2z:0.05,1",
            "--gamma", "0.5", "--set", "stride=20", "--out", str(out), "--format", "json"]
    assert cli.main(argv) == 0
    rep = json.loads((out / "report.json").read_text())
    cfg = rep["config"]
    assert cfg["n"] == 120 and cfg["B"] == 3 and cfg["options"]["stride"] == 20
    assert cfg["mdp"]["gridworld"]["gamma"] == 0.5
    assert cfg["schedules"] == ["const:0.05", "pd2z:0.05,1"]
    assert sorted(p.name for p in out.iterdir()) == ["report.json", "run_info.json"]


def test_check_failure_exit_code(tmp_path, capsys):
    argv = ["final-error", "--n-grid", "100,200,400", "--B", "10", "--schedule", "const:0.05",
            "--schedule", "pd2z:0.05,1", "--seed", "7", "--out", str(tmp_path)]
    assert cli.main(argv) == 0
    assert cli.main(argv + ["--check"]) == cli.EXIT_CHECK
    assert "FAIL" in capsys.readouterr().out


@pytest.mark.parametrize(
    "argv",
    [
        ["pr-compare", "--schedule", "pd2z:oops"],
        ["pr-compare", "--n-grid", "a,b"],
        ["pr-compare", "--set", "novalue"],
        ["pr-compare", "--threads", "0"],
        ["run", "/nonexistent.yaml"],
        ["qq", "--B", "10"],
    ],
)
def test_config_errors_exit_2(argv, tmp_path, capsys):
    assert cli.main(argv + ["--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_config_kind_mismatch(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(small_config("clt_qq").to_dict()))
    assert cli.main(["pr-compare", "--config", str(path), "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_numeric_failure_exit_3(monkeypatch, tmp_path, capsys):
    def boom(cfg, threads=1):
        raise NumericFailureError("iterate overflow", step=12)

    monkeypatch.setattr(cli, "run_experiment", boom)
    assert cli.main(SMALL_PR + ["--out", str(tmp_path)]) == cli.EXIT_NUMERIC
    assert "numeric failure" in capsys.readouterr().err


def test_output_error_exit_1(tmp_path):
    blocker = tmp_path / "f"
    blocker.write_text("")
    assert cli.main(SMALL_PR + ["--out", str(blocker / "x")]) == 1


def test_usage_error():
    with pytest.raises(SystemExit) as info:
        cli.main(["no-such-command"])
    assert info.value.code == 2


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "qdecay.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for name in cli.SUBCOMMANDS:
        assert name in res.stdout
