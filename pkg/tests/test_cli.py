import csv
import json

import pytest

from mppctl.cli import run
from mppctl.instances import instance_d2
from mppctl.model import dump_model


@pytest.fixture()
def d2_file(tmp_path):
    path = tmp_path / "d2.json"
    dump_model(instance_d2(), path)
    return path


def test_solve_writes_csv(tmp_path, d2_file, capsys):
    out = tmp_path / "v.csv"
    assert run(["solve", "--model", str(d2_file), "--substeps", "1000", "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["t", "state", "v"]
    assert len(rows) == 1 + 2001 * 2
    info = json.loads(capsys.readouterr().out)
    assert info["v0"]["s0"] == pytest.approx(0.367, abs=1e-3)


def test_solve_picard(d2_file, capsys):
    assert run(["solve", "--model", str(d2_file), "--method", "picard", "--tol", "1e-8"]) == 0
    assert capsys.readouterr().out.startswith("t,state,v")


def test_missing_model_exit_2(capsys):
    assert run(["solve", "--model", "missing.json"]) == 2
    assert "--model" in capsys.readouterr().err


def test_bad_flag_exit_2(d2_file, capsys):
    assert run(["solve", "--model", str(d2_file), "--substeps", "0"]) == 2
    assert "--substeps" in capsys.readouterr().err


def test_unknown_builtin(capsys):
    assert run(["solve", "--model", "builtin:nope"]) == 2


def test_invalid_model_exit_2(tmp_path, capsys):
    path = tmp_path / "bad.json"
    doc = instance_d2().to_dict()
    doc["mark_dist"] = [[0.6, 0.6], [0.5, 0.5]]
    path.write_text(json.dumps(doc))
    assert run(["solve", "--model", str(path)]) == 2
    assert "sums to" in capsys.readouterr().err


def test_verify_ito(d2_file, capsys):
    assert run(["verify", "ito", "--model", str(d2_file), "--paths", "1000", "--seed", "7"]) == 0
    body = json.loads(capsys.readouterr().out)
    assert body["pass"] is True
    assert {"check", "lhs", "rhs", "tolerance", "pass"} <= set(body["reports"][0])


@pytest.mark.parametrize("check", ["girsanov", "bsde", "energy", "apriori", "contraction"])
def test_verify_suites(check, capsys):
    argv = ["verify", check, "--model", "builtin:d2", "--paths", "2000", "--tol", "1e-8", "--substeps", "50"]
    assert run(argv) == 0
    assert json.loads(capsys.readouterr().out)["pass"] is True


def test_verify_failure_exit_1(capsys):
    # far above the threshold the weighted step never drops below an absolute tolerance
    assert run(["verify", "contraction", "--model", "builtin:d2", "--beta", "1000", "--tol", "1e-8"]) == 1
    body = json.loads(capsys.readouterr().out)
    assert body["pass"] is False


def test_verify_bsde_exact_model(capsys):
    assert run(["verify", "bsde", "--model", "builtin:d1", "--paths", "200"]) == 0
    assert json.loads(capsys.readouterr().out)["reports"][0]["exact"] is True


def test_byte_identical_reports(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    argv = ["verify", "girsanov", "--model", "builtin:d2", "--paths", "3000", "--seed", "3"]
    assert run(argv + ["--out", str(a)]) == 0
    assert run(argv + ["--out", str(b), "--threads", "4"]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_env_seed_overrides(tmp_path, monkeypatch):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert run(["simulate", "--model", "builtin:d2", "--paths", "20", "--seed", "1", "--out", str(a)]) == 0
    monkeypatch.setenv("MPPCTL_SEED", "1")
    assert run(["simulate", "--model", "builtin:d2", "--paths", "20", "--seed", "99", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    monkeypatch.setenv("MPPCTL_SEED", "x")
    assert run(["simulate", "--model", "builtin:d2", "--paths", "2"]) == 2


def test_simulate_controlled_jsonl(capsys):
    assert run(["simulate", "--model", "builtin:d1", "--paths", "5", "--controlled", "--x0", "s1"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 5
    assert json.loads(lines[0])["x0"] == "s1"


def test_oracle(tmp_path, capsys):
    out = tmp_path / "o.csv"
    assert run(["oracle", "--model", "builtin:d2", "--coarse-cells", "2", "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["policy_id", "start_state", "cost"] and len(rows) == 33
    summary = json.loads(capsys.readouterr().out)
    assert summary["n_policies"] == 16


def test_oracle_too_many(capsys):
    assert run(["oracle", "--model", "builtin:d2", "--coarse-cells", "12"]) == 2


def test_evaluate(capsys):
    assert run(["evaluate", "--model", "builtin:d2", "--paths", "20000", "--substeps", "500", "--x0", "0"]) == 0
    body = json.loads(capsys.readouterr().out)
    assert len(body["costs"]) == 1
