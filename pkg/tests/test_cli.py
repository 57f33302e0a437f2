from pathlib import Path

import pytest

from pitta import __version__
from pitta.cli import main

SMOKE = str(Path(__file__).parent.parent / "configs" / "smoke.toml")


def test_version(capsys):
    assert main(["version"]) == 0
    assert capsys.readouterr().out.strip() == __version__


def test_validate(capsys, tmp_path):
    assert main(["validate", SMOKE]) == 0
    assert "ok" in capsys.readouterr().out
    (tmp_path / "bad.toml").write_text('protocol = "sideways"\n')
    assert main(["validate", str(tmp_path / "bad.toml")]) == 1
    assert "config error" in capsys.readouterr().err


def test_oracle(capsys):
    assert main(["oracle", "window-count"]) == 0
    assert capsys.readouterr().out.strip() == "14"
    assert main(["oracle", "nope"]) == 1


def test_usage_errors():
    assert main([]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1


def test_run_smoke(tmp_path, capsys):
    assert main(["run", SMOKE, "--out-dir", str(tmp_path), "--seed-override", "2"]) == 0
    out = capsys.readouterr().out
    assert "base|pitta" in out
    assert (tmp_path / "smoke.base.tent.s2.trace.csv").is_file()
    assert main(["--quiet", "run", SMOKE, "--out-dir", str(tmp_path)]) == 0
    assert capsys.readouterr().out == ""


def test_run_reports_runtime_failure(tmp_path, monkeypatch, capsys):
    import pitta.cli as cli

    def broken(cfg, out_dir):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(cli, "run_experiment", broken)
    assert main(["run", SMOKE, "--out-dir", str(tmp_path)]) == 2
    assert "disk on fire" in capsys.readouterr().err
