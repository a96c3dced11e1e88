import json

import pytest

from dersched.harness.cli import EXIT_INVALID, EXIT_OK, EXIT_SOLVER, main
from dersched.oracle import SolverError


def test_run_to_stdout(capsys):
    assert main(["run"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert [json.loads(l)["policy"] for l in lines] == ["backup", "ratp", "lsps", "oracle"]


def test_run_table_discloses_synthetic(capsys):
    assert main(["run", "--format", "table", "--seed", "3"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("# scenario scenario: synthetic trace")
    assert "seed 3" in out


def test_sweep_writes_files(tmp_path):
    cfg = tmp_path / "s.yaml"
    cfg.write_text("sweep: {axis: peak_price, values: [0, 10]}\n")
    out = tmp_path / "out"
    assert main(["sweep", "--config", str(cfg), "--out", str(out), "--format", "table",
                 "--parallel", "2"]) == EXIT_OK
    names = sorted(p.name for p in out.iterdir())
    assert names == ["summary.jsonl", "summary.txt", "sweep.jsonl", "sweep.txt"]
    assert len((out / "sweep.jsonl").read_text().splitlines()) == 8


def test_sweep_needs_axis(capsys):
    assert main(["sweep"]) == EXIT_INVALID
    assert "sweep needs" in capsys.readouterr().err


def test_trace_override(tmp_path, capsys):
    csv = tmp_path / "t.csv"
    csv.write_text("timestamp,generation_kwh\n2024-01-01T00:00,1\n2024-01-01T01:00,2\n")
    assert main(["oracle", "--trace", str(csv)]) == EXIT_OK
    rec = json.loads(capsys.readouterr().out)
    assert rec["method"] == "clarabel"


def test_bad_inputs_exit_2(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("tariff: {buy: 0.01, sell: 0.06}\n")
    assert main(["run", "--config", str(bad)]) == EXIT_INVALID
    assert main(["run", "--trace", str(tmp_path / "none.csv")]) == EXIT_INVALID
    gap = tmp_path / "gap.csv"
    gap.write_text("timestamp,generation_kwh\n2024-01-01T00:00,1\n2024-01-01T08:00,2\n")
    assert main(["run", "--trace", str(gap)]) == EXIT_INVALID
    assert main(["run", "--parallel", "0"]) == EXIT_INVALID


def test_solver_failure_exit_3(monkeypatch):
    def boom(*args, **kwargs):
        raise SolverError("no convergence", None)
    monkeypatch.setattr("dersched.harness.cli.deterministic_upper_bound", boom)
    assert main(["oracle"]) == EXIT_SOLVER


def test_validate_small(capsys):
    assert main(["validate", "--instances", "2"]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert sum('"depends_on_future": true' in l for l in out) == 2


def test_validate_failure_exit_2(monkeypatch):
    monkeypatch.setattr("dersched.harness.cli.nonmyopia_rows",
                        lambda: [{"scenario": "x", "depends_on_future": False}])
    assert main(["validate", "--instances", "1"]) == EXIT_INVALID


def test_bench_and_noise(capsys):
    assert main(["bench", "--horizons", "24", "48", "--repeats", "1",
                 "--oracle-max-horizon", "0"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert json.loads(lines[-1])["fit"] == "lsps_linear"
    assert main(["noise", "--levels", "0", "0.1", "--seeds", "3"]) == EXIT_OK
    rows = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert [r["sigma"] for r in rows] == [0.0, 0.1]


def test_unknown_command():
    with pytest.raises(SystemExit):
        main(["train"])
