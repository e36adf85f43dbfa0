import json
import subprocess
import sys

import pytest

from proxysleuth.cli import main


def test_simulate_json(tmp_path, capsys):
    out = tmp_path / "r.json"
    assert main(["simulate", "proxy-on.scn", "--seed", "42", "-o", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["schema_version"] == "1"
    assert data["network_verdict"]["proxy_present"] is True
    assert "proxy_present=true" in capsys.readouterr().err


def test_simulate_csv_table(capsys):
    assert main(["simulate", "transcoding.scn", "--format", "csv", "--table", "transcoding"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "original_size,observed_size" and len(lines) == 5


def test_suite_flags_pick_suites(capsys):
    assert main(["detect", "--mode", "Sim", "--scenario", "caching.scn"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["cache_verdicts"] == []


def test_simulate_redirect_with_sentinel_flags(capsys):
    assert main(["simulate", "redirect.scn", "--sentinel", "E2", "--sentinel", "E1"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert list(data["redirect"]["direction_results"]) == ["E2->E1", "E1->E2"]


def test_config_errors_exit_2(capsys):
    assert main(["detect"]) == 2
    assert "destinations" in capsys.readouterr().err
    assert main(["simulate", "nope.scn"]) == 2


def test_suite_command(tmp_path, capsys):
    assert main(["suite", "--seeds", "1", str(tmp_path)]) == 0
    assert "no scenario files" in capsys.readouterr().err
    (tmp_path / "x.scn").write_text("""
topology:
  hosts: [{name: client, address: 10.0.0.1}, {name: o, address: 10.0.0.2}]
  links: [{a: client, b: o, delay_ms: 1}]
""")
    assert main(["suite", "--seeds", "1", str(tmp_path)]) == 0
    assert "Unverifiable" in capsys.readouterr().out


def test_suite_failure_exit_code(tmp_path, capsys):
    src = open(__import__("proxysleuth.simnet", fromlist=["x"]).bundled_scenario_dir()
               / "no-proxy.scn").read()
    (tmp_path / "wrong.scn").write_text(src.replace("proxy_present: false", "proxy_present: true"))
    assert main(["suite", "--seed-list", "0,1", str(tmp_path)]) == 1
    assert "fail=2" in capsys.readouterr().err


def test_destinations_file(tmp_path, capsys):
    f = tmp_path / "d.txt"
    f.write_text("# far sites\nfar-00.sim\nfar-01.sim  # trailing\n\n")
    assert main(["detect", "--mode", "Sim", "--scenario", "proxy-on.scn",
                 "--destinations-file", str(f)]) == 0
    data = json.loads(capsys.readouterr().out)
    assert sorted(data["probe_pairs"]) == ["far-00.sim", "far-01.sim"]


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "proxysleuth.cli", "--help"],
                         capture_output=True, text=True, check=True).stdout
    for sub in ("detect", "cache", "rewrite", "redirect", "full", "simulate",
                "serve-origin", "serve-sentinel", "suite"):
        assert sub in out


@pytest.mark.parametrize("sub", ["serve-origin", "serve-sentinel"])
def test_serve_commands_report_missing_cert(sub, capsys):
    args = [sub, "--cert", "/nonexistent.pem"]
    if sub == "serve-sentinel":
        args += ["--hostname", "e1.test"]
    assert main(args) == 2
    assert "certificate" in capsys.readouterr().err
