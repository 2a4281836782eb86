import json

from pidtwin.config import DEFAULT_CONFIG, config_digest
from pidtwin.preflight import run_preflight


def test_preflight_ok_on_repo(repo_root, tmp_path, capsys):
    rc = run_preflight(repo_root / "pipeline.yaml", tmp_path)
    assert rc == 0
    out = capsys.readouterr().out
    assert "config OK" in out and "four-way rule=crossover" in out
    norm = json.loads((tmp_path / "config.normalized.json").read_text(encoding="utf-8"))
    assert norm["meta"] == {"version": 1, "digest": config_digest(DEFAULT_CONFIG)}
    assert norm["classes"] == ["Pump", "Valve", "HeatExchanger", "Flap"]
    assert norm["export"]["class_map"]["Flap"]["brick"] == "https://brickschema.org/schema/Brick#Damper"
    assert norm["stages"]["crossing"]["four_way_rule"] == "crossover"


def test_preflight_fails_cleanly_on_bad_value(tmp_path, capsys):
    (tmp_path / "pipeline.yaml").write_text("hough: {votes: [not, a, number]}\n", encoding="utf-8")
    rc = run_preflight(tmp_path / "pipeline.yaml", tmp_path / "out")   # must NOT raise
    assert rc == 1
    assert "not a number: hough.votes" in capsys.readouterr().out
    assert not (tmp_path / "out" / "config.normalized.json").exists()


def test_preflight_fails_on_missing_config(tmp_path, capsys):
    rc = run_preflight(tmp_path / "nope.yaml", tmp_path)
    assert rc == 1
    assert "not found" in capsys.readouterr().out


def test_preflight_checks_templates(tmp_path, capsys):
    (tmp_path / "builtin.yaml").write_text("detector: {mode: templates}\n", encoding="utf-8")
    assert run_preflight(tmp_path / "builtin.yaml", tmp_path / "a") == 0
    assert "templates (builtin): 4 file(s)" in capsys.readouterr().out

    (tmp_path / "missing.yaml").write_text(
        f"detector: {{mode: templates, templates_dir: '{tmp_path / 'no-such-dir'}'}}\n", encoding="utf-8")
    assert run_preflight(tmp_path / "missing.yaml", tmp_path / "b") == 1
    assert "❌ templates:" in capsys.readouterr().out


def test_preflight_reports_uncovered_class(tmp_path, capsys):
    (tmp_path / "boiler.yaml").write_text(
        "classes: [Pump, Valve, HeatExchanger, Flap, Boiler]\n"
        "detector: {mode: templates}\n"
        "export: {class_map: {Boiler: {brick: Boiler, budo: BO}}}\n",
        encoding="utf-8",
    )
    assert run_preflight(tmp_path / "boiler.yaml", tmp_path / "out") == 1
    assert "no template for class(es) ['Boiler']" in capsys.readouterr().out
