import json

import pytest

from sipk.cli import main
from sipk.instances import t1, t2


@pytest.fixture
def t1_file(tmp_path):
    p = tmp_path / "t1.json"
    p.write_text(t1().to_json())
    return str(p)


def read_csv(path):
    lines = path.read_text().splitlines()
    head = lines[0].split(",")
    return [dict(zip(head, ln.split(","))) for ln in lines[1:]]


def test_run_cp_adversarial(t1_file, tmp_path, capsys):
    out = tmp_path / "o"
    rc = main(["run", "--instance", t1_file, "--algo", "cp", "--oracle", "adversarial:0.5", "--eps", "1e-9",
               "--out", str(out)])
    assert rc == 0
    rows = read_csv(out / "cp_trace.csv")
    assert rows and all(r["pass_opt"] == "true" and r["pass_feas"] == "true" for r in rows)
    for r in rows:
        assert float(r["bound_opt"]) * (int(r["k"]) + 2) == pytest.approx(8.0)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["pass"] and summary["cp"]["rates"]["pass"]
    assert json.loads(capsys.readouterr().out)["pass"] is True


def test_run_ioa(t1_file, tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--instance", t1_file, "--algo", "ioa", "--eps1", "1e-4", "--eps2", "1e-4",
                 "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["ioa"]["termination"] == "converged"
    assert summary["ioa"]["inner_feasible_pass"]
    rows = read_csv(out / "ioa_trace.csv")
    assert float(rows[-1]["phi_hat_hi"]) <= 1e-9


def test_verify(tmp_path, capsys):
    p = tmp_path / "t2.json"
    p.write_text(t2().to_json())
    assert main(["verify", "--instance", str(p), "--points", "3", "--samples", "20"]) == 0
    reports = json.loads(capsys.readouterr().out)
    assert {r["check"] for r in reports} == {"relaxation", "strong_duality", "dual_smoothness"}
    assert all(r["pass"] for r in reports)


def test_gen_and_rates(tmp_path, t1_file, capsys):
    g = tmp_path / "g.json"
    assert main(["gen", "--m", "3", "--n", "2", "--seed", "5", "--out", str(g)]) == 0
    assert json.loads(g.read_text())["name"].endswith("s5")
    out = tmp_path / "o"
    main(["run", "--instance", t1_file, "--oracle", "adversarial:0.1", "--eps", "1e-9", "--out", str(out)])
    capsys.readouterr()
    rc = main(["rates", "--trace", str(out / "cp_trace.csv"), "--R", "1", "--tau", "1", "--mu", "1",
               "--delta", "0.1", "--val-star", "0.5"])
    assert rc == 0
    assert json.loads(capsys.readouterr().out)["pass"] is True
    # an impossible val_star makes the optimality audit fail
    assert main(["rates", "--trace", str(out / "cp_trace.csv"), "--R", "1", "--tau", "1", "--mu", "1",
                 "--val-star", "50"]) == 1


def test_spec_file_and_determinism(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"algo": "both", "m": 2, "n": 2, "r": 2, "seed": 3, "oracle": "sdp+grid"}))
    for d in ("a", "b"):
        assert main(["run", "--spec", str(spec), "--out", str(tmp_path / d)]) == 0
    for name in ("instance.json", "cp_trace.csv", "ioa_trace.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    sa = json.loads((tmp_path / "a" / "summary.json").read_text())
    sb = json.loads((tmp_path / "b" / "summary.json").read_text())
    sa.pop("timestamp"), sb.pop("timestamp")
    assert sa == sb


@pytest.mark.parametrize("argv, err", [
    (["run", "--instance", "missing.json"], "FileNotFoundError"),
    (["run", "--gen", "--m", "20"], "InstanceError"),
    (["run", "--gen", "--oracle", "bogus"], "ValueError"),
])
def test_structured_errors(argv, err, tmp_path, capsys):
    assert main(argv + ["--out", str(tmp_path / "o")]) == 2
    doc = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert doc["error"] == err


def test_unknown_spec_key(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"colour": "red"}))
    assert main(["run", "--spec", str(spec)]) == 2
    assert "colour" in json.loads(capsys.readouterr().err)["message"]


def test_log_level(monkeypatch, tmp_path, t1_file):
    monkeypatch.setenv("SIPK_LOG", "debug")
    assert main(["run", "--instance", t1_file, "--out", str(tmp_path / "o")]) == 0
