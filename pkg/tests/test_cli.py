import json
import subprocess
import sys

import pytest

from sgvi import cli

CONV = ["convergence", "--system", "kubo", "--beta", "0.1", "--q0", "0", "--p0", "1", "--T", "0.4",
        "--schemes", "P1N1Q2Gau,P2N2Q2Lob", "--dt-levels", "0.01,0.02,0.04", "--paths", "30", "--seed", "42"]


def _body(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# generated ")
    return lines[1:]


def test_convergence_outputs(tmp_path):
    out = tmp_path / "conv.csv"
    assert cli.main(CONV + ["--out", str(out)]) == 0
    body = _body(out)
    cfg = json.loads(body[0][2:])
    assert cfg["seed"] == 42 and cfg["schemes"] == ["P1N1Q2Gau", "P2N2Q2Lob"]
    assert body[1] == "scheme,dt,ms_error,stderr,n_paths"
    assert len(body) == 2 + 2 * 3
    summary = json.loads(out.with_suffix(".json").read_text())
    assert [r["scheme"] for r in summary["results"]] == ["P1N1Q2Gau", "P2N2Q2Lob"]
    assert all(r["symplectic"] for r in summary["results"])


def test_byte_identical_rerun_and_threads(tmp_path):
    a = tmp_path / "a.csv"
    assert cli.main(CONV + ["--out", str(a)]) == 0
    first = _body(a)
    assert cli.main(CONV + ["--out", str(a)]) == 0
    assert _body(a) == first
    assert cli.main(CONV + ["--out", str(a), "--threads", "3"]) == 0
    assert _body(a)[1:] == first[1:]


def test_config_round_trip(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.main(CONV + ["--out", str(a)]) == 0
    assert cli.main(["convergence", "--config", str(a), "--out", str(b)]) == 0
    ca, cb = json.loads(_body(a)[0][2:]), json.loads(_body(b)[0][2:])
    ca.pop("out"), cb.pop("out")
    assert ca == cb
    assert _body(a)[1:] == _body(b)[1:]


def test_json_config_and_flag_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"command": "energy", "system": "anharmonic", "T": 2.0, "dt": 0.25,
                               "paths": 10, "seed": 1}))
    out = tmp_path / "e.csv"
    assert cli.main(["energy", "--config", str(cfg), "--paths", "12", "--out", str(out)]) == 0
    resolved = json.loads(_body(out)[0][2:])
    assert resolved["paths"] == 12 and resolved["T"] == 2.0 and resolved["seed"] == 1
    assert _body(out)[1] == "scheme,t,mean_H,stderr"
    assert json.loads(out.with_suffix(".json").read_text())["result"]["n_paths"] == 12


def test_seed_from_environment(monkeypatch):
    monkeypatch.setenv(cli.SEED_ENV, "77")
    args = cli.build_parser().parse_args(["energy"])
    assert cli.resolve_config(args)["seed"] == 77
    args = cli.build_parser().parse_args(["energy", "--seed", "3"])
    assert cli.resolve_config(args)["seed"] == 3


@pytest.mark.parametrize("argv", [
    ["convergence", "--schemes", "NoSuchScheme", "--paths", "4"],
    ["convergence", "--bogus"],
    ["convergence", "--system", "synchrotron", "--reference", "exact", "--paths", "4"],
    ["energy", "--dt", "0.3", "--T", "1"],
    ["tableau", "--scheme", "xyz"],
])
def test_validation_errors_exit_2(argv, tmp_path, capsys):
    out = tmp_path / "x.csv"
    assert cli.main(argv + ["--out", str(out)]) == 2
    assert not out.exists() and not out.with_suffix(".json").exists()


def test_unknown_config_key_exit_2(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"nonsense": 1}))
    assert cli.main(["energy", "--config", str(cfg)]) == 2


def test_experiment_failure_exit_3(tmp_path):
    out = tmp_path / "m.csv"
    argv = ["energy", "--system", "anharmonic", "--scheme", "milstein", "--T", "100", "--dt", "0.25",
            "--paths", "20", "--out", str(out)]
    assert cli.main(argv) == 3
    assert list(tmp_path.iterdir()) == []


def test_trajectory_planar(tmp_path):
    out = tmp_path / "t.csv"
    argv = ["trajectory", "--system", "planar-rotational", "--q0", "1,0", "--p0", "0,1", "--T", "1",
            "--dt", "0.1", "--scheme", "P2N2Q2Lob", "--out", str(out)]
    assert cli.main(argv) == 0
    assert _body(out)[1] == "t,q1,q2,p1,p2,H,J_rotation"
    assert len(_body(out)) == 2 + 11
    assert json.loads(out.with_suffix(".json").read_text())["result"]["max_momentum_drift"] <= 1e-9


def test_tableau_text(capsys):
    assert cli.main(["tableau", "--scheme", "p2n2q2otr"]) == 0
    text = capsys.readouterr().out
    assert "tableau P2N2Q2Otr" in text and "1/2" in text and "2/3" in text
    assert "symplectic condition violation: 0.000e+00" in text


def test_check_subcommand(tmp_path):
    out = tmp_path / "c.csv"
    argv = ["check", "--schemes", "P1N1Q2Gau,P1N1Q1Rec,milstein", "--systems", "kubo,planar-rotational",
            "--draws", "3", "--out", str(out)]
    assert cli.main(argv) == 0
    body = _body(out)
    assert body[1] == "scheme,system,symplectic_defect,momentum_drift"
    rows = {tuple(r.split(",")[:2]): r.split(",")[2:] for r in body[2:]}
    assert float(rows[("P1N1Q2Gau", "kubo")][0]) <= 1e-6
    assert float(rows[("milstein", "kubo")][0]) >= 1e-3
    assert float(rows[("P1N1Q2Gau", "planar-rotational")][1]) <= 1e-9
    skipped = json.loads(out.with_suffix(".json").read_text())["skipped"]
    assert {"P1N1Q1Rec"} == {s["scheme"] for s in skipped}


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "sgvi", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for sub in ("convergence", "energy", "trajectory", "tableau", "check"):
        assert sub in r.stdout
