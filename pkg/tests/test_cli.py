import json

import pytest
import yaml

from tandem_mpc.cli import build_parser, main
from tandem_mpc.qp import load_problem


@pytest.fixture
def short_config(tmp_path):
    path = tmp_path / "short.yaml"
    path.write_text(yaml.safe_dump({"duration_s": 0.1}))
    return path


def test_parser_commands():
    ap = build_parser()
    assert ap.parse_args(["mc"]).runs == 100
    assert ap.parse_args(["compare"]).runs == 50
    assert ap.parse_args(["dump-qp", "--step", "3"]).step == 3
    with pytest.raises(SystemExit):
        ap.parse_args([])


def test_run_writes_outputs(tmp_path, short_config, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(short_config), "--out", str(out), "--seed", "4"]) == 0
    assert (out / "run.csv").read_text().startswith("t,rx,ry,rz")
    summary = json.loads((out / "summary.json").read_text())
    assert summary["steps"] == 5 and summary["seed"] == 4
    assert "reached=" in capsys.readouterr().out


def test_mc_and_compare(tmp_path, short_config):
    out = tmp_path / "out"
    assert main(["mc", "--config", str(short_config), "--out", str(out), "--runs", "2"]) == 0
    assert json.loads((out / "monte_carlo.json").read_text())["summary"]["runs"] == 2
    assert main(["compare", "--config", str(short_config), "--out", str(out), "--runs", "1"]) == 0
    assert "delta_pct" in json.loads((out / "compare.json").read_text())


def test_dump_qp(tmp_path, short_config):
    out = tmp_path / "out"
    assert main(["dump-qp", "--config", str(short_config), "--out", str(out), "--step", "2"]) == 0
    p = load_problem(out / "qp_step2.txt")
    assert (p.n, p.m) == (150, 370)


def test_error_exit_code(tmp_path, short_config, monkeypatch, capsys):
    import tandem_mpc.cli as cli
    from tandem_mpc.errors import SolverFailure

    def boom(cfg, **kw):
        raise SolverFailure("3 consecutive QP failures")

    monkeypatch.setattr(cli, "run_closed_loop", boom)
    assert main(["run", "--config", str(short_config), "--out", str(tmp_path / "o")]) == 1
    assert "QP failures" in capsys.readouterr().err
