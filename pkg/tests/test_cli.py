import json

import pytest

from sdelab import cli
from sdelab.reports import dumps


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


TIGHT = {"subcommand": "tightness", "mu": 2.0, "q": 4, "p": 4}


def test_list_catalog(capsys):
    assert cli.main(["list-catalog"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert int(out[-1].split()[0]) >= 10
    kinds = {line.split()[1] for line in out[:-1]}
    assert {"example_3_22_1", "rotation_sigma", "identity", "zero"} <= kinds


def test_list_commands(capsys):
    assert cli.main(["list-commands"]) == 0
    names = {line.split()[0] for line in capsys.readouterr().out.splitlines()}
    assert {"morrey-norm", "exit-mean", "green", "chaos-terms", "nonexistence"} <= names


def test_every_schema_is_valid():
    import jsonschema
    for cmd in cli.COMMANDS.values():
        jsonschema.Draft202012Validator.check_schema(cmd.schema)


def test_tightness_run(tmp_path, capsys):
    rc = cli.main(["run", "tightness", "--config", write(tmp_path, TIGHT), "--out-dir", str(tmp_path / "o")])
    assert rc == 0
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["payload"]["nu"] == pytest.approx(0.25)
    assert set(rep) >= {"payload", "meta", "config_digest"}


def test_invalid_exponent_names_pointer(tmp_path, capsys):
    cfg = {"subcommand": "morrey-norm", "field": {"kind": "inverse_power", "dim": 3},
           "spec": {"q": 2, "p": 0}}
    rc = cli.main(["run", "morrey-norm", "--config", write(tmp_path, cfg), "--out-dir", str(tmp_path)])
    assert rc == 1
    assert "`spec.p`" in capsys.readouterr().err


@pytest.mark.parametrize("cfg,msg", [
    ({"subcommand": "green", "mu": 1}, "config is for"),
    ({"subcommand": "tightness", "mu": 1, "q": 2, "p": 2, "bogus": 1}, "bogus"),
    ({"subcommand": "tightness", "mu": 1, "q": 2}, "p"),
])
def test_config_errors(tmp_path, capsys, cfg, msg):
    assert cli.main(["run", "tightness", "--config", write(tmp_path, cfg), "--out-dir", str(tmp_path)]) == 1
    assert msg in capsys.readouterr().err


def test_unreadable_config(tmp_path, capsys):
    assert cli.main(["run", "tightness", "--config", str(tmp_path / "missing.json")]) == 1
    (tmp_path / "bad.json").write_text("{not json")
    assert cli.main(["run", "tightness", "--config", str(tmp_path / "bad.json")]) == 1


def test_unknown_field_kind(tmp_path, capsys):
    cfg = {"subcommand": "morrey-norm", "field": {"kind": "nope", "dim": 2}, "spec": {"q": 2, "p": 2}}
    assert cli.main(["run", "morrey-norm", "--config", write(tmp_path, cfg), "--out-dir", str(tmp_path)]) == 1
    assert "nope" in capsys.readouterr().err


def test_inv_norm_fixture(tmp_path, fixtures_dir):
    out = tmp_path / "o"
    rc = cli.main(["run", "morrey-norm", "--config", str(fixtures_dir / "inv_norm.json"), "--out-dir", str(out)])
    assert rc == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["passed"] is True
    assert (out / "ladder.csv").exists()


def test_failed_check_exits_2(tmp_path, fixtures_dir):
    cfg = json.loads((fixtures_dir / "inv_norm.json").read_text())
    cfg["expect"]["value"] = 3.0
    assert cli.main(["run", "morrey-norm", "--config", write(tmp_path, cfg), "--out-dir", str(tmp_path)]) == 2


def test_simulate_dumps_trajectories(tmp_path):
    cfg = {"subcommand": "simulate", "stride": 10,
           "sim": {"sigma": {"kind": "identity", "dim": 2}, "drift": {"kind": "zero", "dim": 2},
                   "x0": [0.0, 0.0], "horizon": 0.1, "h": 0.01, "n_paths": 8, "seed": 1}}
    assert cli.main(["run", "simulate", "--config", write(tmp_path, cfg), "--out-dir", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "trajectories.bin").stat().st_size > 0


def test_env_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv("SDELAB_OUT_DIR", str(tmp_path / "env"))
    monkeypatch.setenv("SDELAB_THREADS", "3")
    assert cli.main(["run", "tightness", "--config", write(tmp_path, TIGHT)]) == 0
    rep = json.loads((tmp_path / "env" / "report.json").read_text())
    assert rep["meta"]["threads"] == 3


def test_replay_is_identical():
    cfg = {"subcommand": "exit-mean", "radius": 0.5, "T_ladder": [0.05, 0.1, 0.2],
           "sim": {"sigma": {"kind": "identity", "dim": 2}, "drift": {"kind": "zero", "dim": 2},
                   "x0": [0.0, 0.0], "horizon": 1.0, "h": 0.01, "n_paths": 300, "seed": 9}}
    cli.validate(cfg, "exit-mean")
    a, _ = cli.execute("exit-mean", cfg, 1)
    b, _ = cli.execute("exit-mean", cfg, 1)
    c, _ = cli.execute("exit-mean", cfg, 4)
    assert dumps(a["payload"]) == dumps(b["payload"]) == dumps(c["payload"])
    assert cli.payload_digest(a) == cli.payload_digest(c)
