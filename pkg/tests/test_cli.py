import json
import os
import subprocess
import sys

import pytest

from disasterbp import cli
from disasterbp.errors import ValidationError
from disasterbp.io import atomic_write, csv_text, dumps_json, validate


def _run(argv, capsys):
    rc = cli.main(argv)
    cap = capsys.readouterr()
    return rc, cap.out, cap.err


def test_phase_table_example(capsys):
    rc, out, err = _run(["phase", "--lambda", "1", "--mu", "1.5", "--kappa", "1", "--p", "0.3679"], capsys)
    assert rc == 0
    assert "subcritical-ld" in out or "large-deviation" in out
    assert "0.15343" in out or "0.153" in out
    assert "nu=0.500" in err


def test_phase_json_validates(capsys):
    rc, out, _ = _run(["phase", "--lambda", "2", "--law", "2:1", "--p", "0.36787944117144233",
                       "--format", "json"], capsys)
    assert rc == 0
    doc = json.loads(out)
    validate(doc, "output")
    assert doc["result"]["survival_prob"] == pytest.approx(0.5)
    assert doc["params"]["law"] == "2:1"


@pytest.mark.parametrize("argv, code", [
    (["phase", "--p", "1.2"], 1),
    (["phase", "--kappa", "-1"], 1),
    (["simulate-bp", "--law", "0:0.5,2:0.6"], 1),
    (["inhom", "--schedule", '{"kind": "constant", "b": 1}'], 1),
    (["inhom", "--schedule", "{not json"], 1),
    (["csbp", "--mechanism", '{"b": 0.5, "c": 0, "atoms": [[1, 1]], "p": 0.5}'], 1),
    (["ldp-check", "--x", "8", "--t-end", "100", "--replicas", "1000"], 2),
])
def test_exit_codes(argv, code, capsys):
    rc, _, err = _run(argv, capsys)
    assert rc == code
    assert err.strip()


def test_error_names_the_bound(capsys):
    rc, _, err = _run(["phase", "--p", "1.2"], capsys)
    assert rc == 1 and "p must lie in" in err


def test_bad_window_rejected(capsys):
    rc, _, err = _run(["survival", "--lambda", "1", "--law", "0:0.5,2:0.5", "--p", "0.5",
                       "--window", "80,20", "--particles", "500", "--groups", "2"], capsys)
    assert rc == 1 and "window" in err


def test_regime_refusal(capsys):
    # a decay-rate fit is meaningless when survival stays positive
    rc, _, err = _run(["csbp", "--b", "2", "--p", "0.5", "--window", "5,10", "--replicas", "100"], capsys)
    assert rc == 3 and err.startswith("refused")


def test_duality_reproducible_and_schema(tmp_path, capsys):
    argv = ["duality-check", "--x", "0.5", "--t", "2", "--replicas", "20000", "--seed", "42",
            "--format", "json"]
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert cli.main(argv + ["-o", str(a)]) == 0
    assert cli.main(argv + ["-o", str(b), "--workers", "1"]) == 0
    assert a.read_bytes() == b.read_bytes()
    doc = json.loads(a.read_text())
    validate(doc, "output")
    assert abs(doc["result"]["cells"][0]["z_score"]) < 4
    assert "workers" not in doc["params"] and "output_path" not in doc["params"]


def test_config_precedence_and_env_seed(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"command": "phase", "params": {"kappa": 2.0, "p": 0.3}, "seed": 5}))
    params, seed = cli.resolve("phase", {"config": str(cfg), "p": 0.4}, environ={})
    assert params["kappa"] == 2.0 and params["p"] == 0.4 and seed == 5
    params, seed = cli.resolve("phase", {}, environ={"DISASTERBP_SEED": "17"})
    assert seed == 17
    params, seed = cli.resolve("phase", {"seed": 3}, environ={"DISASTERBP_SEED": "17"})
    assert seed == 3
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"command": "phase", "params": {"nope": 1}}))
    with pytest.raises(ValidationError):
        cli.resolve("phase", {"config": str(bad)}, environ={})
    other = tmp_path / "other.json"
    other.write_text(json.dumps({"command": "rates"}))
    with pytest.raises(ValidationError):
        cli.resolve("phase", {"config": str(other)}, environ={})


@pytest.mark.parametrize("argv", [
    ["rates", "--p-values", "0.2,0.5"],
    ["simulate-bp", "--t-end", "3", "--seed", "1"],
    ["simulate-pjump", "--drift", "power", "--a", "1", "--c", "1", "--q", "1.5", "--t-end", "5"],
    ["inhom", "--mode", "series", "--n-grid", "10", "--t-end", "5"],
    ["inhom", "--mode", "limit", "--t-end", "1000"],
    ["inhom", "--mode", "survival", "--replicas", "2000", "--t-end", "20"],
    ["csbp", "--b", "2", "--t-end", "5", "--replicas", "2000"],
    ["ldp-check", "--x", "0.5", "--event", "lower", "--replicas", "20000"],
    ["regvar-check", "--exponent", "-2", "--t-grid", "10,100,1000", "--replicas", "20"],
    ["survival", "--p", "0.5", "--window", "5,15", "--particles", "2000", "--groups", "4"],
])
def test_every_command_emits_valid_json(argv, capsys):
    rc, out, _ = _run(argv + ["--format", "json"], capsys)
    assert rc == 0
    doc = json.loads(out)
    validate(doc, "output")
    assert doc["command"] == argv[0]


def test_csv_and_table_formats(capsys):
    rc, out, _ = _run(["simulate-bp", "--t-end", "2", "--format", "csv"], capsys)
    assert rc == 0 and out.splitlines()[0] == "t,value,kind"
    rc, out, _ = _run(["rates", "--p-values", "0.3"], capsys)
    assert rc == 0 and "decay_rate" in out.splitlines()[0]


def test_io_helpers(tmp_path):
    p = atomic_write(tmp_path / "sub" / "x.txt", "hello\n")
    assert p.read_text() == "hello\n"
    assert not [f for f in p.parent.iterdir() if f.name.startswith(".")]
    assert dumps_json({"b": float("inf"), "a": 1}) == '{\n  "a": 1,\n  "b": null\n}\n'
    assert csv_text(("a", "b"), [(0.1, "x")]) == "a,b\n0.1,x\n"
    with pytest.raises(ValidationError):
        validate({"command": "phase"}, "output")


def test_console_entry_point_subprocess(tmp_path):
    out = tmp_path / "r.json"
    env = dict(os.environ, DISASTERBP_SEED="9")
    cmd = [sys.executable, "-m", "disasterbp.cli", "ldp-check", "--x", "2", "--replicas", "50000",
           "--format", "json", "-o", str(out)]
    r = subprocess.run(cmd, capture_output=True, text=True, env=env)
    assert r.returncode == 0, r.stderr
    assert json.loads(out.read_text())["seed"] == 9
