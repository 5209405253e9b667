import json

import pytest

from elg.cli import EXIT_CONFIG, EXIT_EMPTY, EXIT_OK, main


@pytest.fixture
def cfg_file(tmp_path):
    def make(**kw):
        d = {"P": 256, "measurement": "R16"}
        d.update(kw)
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(d))
        return str(p)
    return make


def test_phantoms(capsys):
    assert main(["phantoms"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "sparse-disks: 3 inclusion(s)" in out


def test_forward_then_reconstruct(cfg_file, tmp_path):
    cfg = cfg_file()
    fwd = tmp_path / "fwd.json"
    assert main(["forward", "--config", cfg, "--out", str(fwd), "--seed", "2"]) == EXIT_OK
    assert json.loads(fwd.read_text())["seed"] == 2
    out = tmp_path / "rec"
    assert main(["reconstruct", str(fwd), "--config", cfg, "--out", str(out), "--truth"]) == EXIT_OK
    res = json.loads((out / "result.json").read_text())
    assert "jaccard" in res["metrics"]
    assert (out / "mu.csv").exists()


def test_pipeline_verb(cfg_file, tmp_path):
    out = tmp_path / "run"
    assert main(["pipeline", "--config", cfg_file(), "--out", str(out)]) == EXIT_OK
    assert {p.name for p in out.iterdir()} == {"forward.json", "result.json", "psi.csv", "lambda.csv", "mu.csv"}


def test_config_error_exit(cfg_file, tmp_path, capsys):
    assert main(["forward", "--config", cfg_file(colour=1), "--out", str(tmp_path / "f.json")]) == EXIT_CONFIG
    assert "configuration error" in capsys.readouterr().err
    assert main(["reconstruct", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == EXIT_CONFIG
    bad = cfg_file(phantom_overrides={"inclusions": {"0": {"lam": -9.0}}})
    assert main(["pipeline", "--config", bad, "--out", str(tmp_path / "x")]) == EXIT_CONFIG


def test_empty_support_exit(cfg_file, tmp_path):
    cfg = cfg_file(snr_db=None, phantom_overrides={"inclusions": [
        {"shape": "disk", "center": [0.0, -2.0], "radius": 1.0, "lam": 1.0, "mu": 1.0}]})
    out = tmp_path / "empty"
    assert main(["pipeline", "--config", cfg, "--out", str(out)]) == EXIT_EMPTY
    res = json.loads((out / "result.json").read_text())
    assert res["diagnostics"]["complete"] is False
    assert res["lambda_map"]["values"] is None


def test_threads_env(cfg_file, tmp_path, monkeypatch):
    monkeypatch.setenv("ELG_THREADS", "1")
    assert main(["forward", "--config", cfg_file(), "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "forward.json").exists()


def test_numerical_failure_exit(cfg_file, tmp_path, monkeypatch):
    from elg import cli
    from elg.msbl import MsblError

    def boom(*a, **kw):
        raise MsblError("covariance not positive definite")
    monkeypatch.setattr(cli, "run_pipeline", boom)
    assert main(["pipeline", "--config", cfg_file(), "--out", str(tmp_path)]) == cli.EXIT_NUMERICAL
