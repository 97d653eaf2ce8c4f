from __future__ import annotations

import copy
import json
import subprocess
import sys

import pytest

from qcoexist.cli import main
from qcoexist.recipes import reproduce
from qcoexist.scenario import default_template_path
from qcoexist.states import BellTarget, werner_mix
from qcoexist.tagio import read_tags
from qcoexist.tomography import TomographyData


def test_simulate_then_analyze(tmp_path, capsys):
    assert main(["simulate", "--profile", "deployed_250m", "--duration", "0.05", "--seed", "3",
                 "--alice-angle", "0", "--bob-angle", "1.5707963267948966", "--format", "bin",
                 "--out-dir", str(tmp_path)]) == 0
    truth = json.loads((tmp_path / "ground_truth.json").read_text())
    assert read_tags(tmp_path / "alice.bin").duration_ps == truth["duration_ps"]
    capsys.readouterr()
    assert main(["analyze", str(tmp_path / "alice.bin"), str(tmp_path / "bob.bin"), "--find-delay",
                 "--out-dir", str(tmp_path)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert abs(out["delay_ps"] - truth["differential_delay_ps"]) < 100
    res = out["results"][0]
    assert res["coincidences"] > 0.8 * truth["true_pairs"] * 0.5
    assert (tmp_path / "coincidences.csv").read_text().startswith("window_ps,")


def test_window_sweep_from_files(tmp_path, capsys):
    main(["simulate", "--profile", "deployed_250m", "--duration", "0.02", "--out-dir", str(tmp_path)])
    capsys.readouterr()
    assert main(["analyze", str(tmp_path / "alice.csv"), str(tmp_path / "bob.csv"), "--delay-ps", "7500",
                 "--windows-ps", "500", "1000", "2000", "--out-dir", str(tmp_path)]) == 0
    counts = [r["coincidences"] for r in json.loads(capsys.readouterr().out)["results"]]
    assert counts == sorted(counts)


def test_fringe_analysis_from_recipe_output(calibrated, tmp_path, capsys):
    sf = copy.deepcopy(calibrated)
    sf.recipes.update({"fringe_points": 16, "table1_profiles": ["deployed_250m"], "delay_calibration_s": 0.5})
    reproduce("fringes_fig4", sf, out_dir=tmp_path)
    capsys.readouterr()
    assert main(["analyze", "--kind", "fringe", str(tmp_path / "fringes.csv"), "--out-dir", str(tmp_path)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert len(out["fits"]) == 4 and out["chsh"]["s"] > 2.0


def test_tomography_analysis(tmp_path, capsys):
    data = TomographyData.exact(werner_mix(BellTarget(), 0.9), 1000.0)
    lines = ["alice,bob,integration_s,coincidences"] + [f"{r.alice},{r.bob},1.0,{r.count!r}" for r in data.records]
    (tmp_path / "tomo.csv").write_text("\n".join(lines) + "\n")
    assert main(["analyze", "--kind", "tomography", str(tmp_path / "tomo.csv"), "--out-dir", str(tmp_path)]) == 0
    assert json.loads(capsys.readouterr().out)["fidelity"] == pytest.approx(0.925, abs=1e-6)


def test_config_error_exit_code(tmp_path, capsys):
    (tmp_path / "a.csv").write_text("# duration_ps=10\ntime_ps,channel\n")
    assert main(["analyze", str(tmp_path / "a.csv"), "--out-dir", str(tmp_path)]) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text("[base\n")
    assert main(["simulate", "--scenario", str(bad), "--out-dir", str(tmp_path)]) == 2
    assert main(["reproduce", "table2", "--scenario", str(bad)]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_uncalibrated_reproduce_exit_code(tmp_path, capsys):
    assert main(["reproduce", "table2", "--scenario", str(default_template_path()), "--out-dir", str(tmp_path)]) == 2
    assert main(["reproduce", "table2", "--scenario", str(default_template_path()), "--allow-uncalibrated",
                 "--out-dir", str(tmp_path)]) == 0


def test_analysis_failure_exit_code(tmp_path, capsys):
    main(["simulate", "--profile", "deployed_250m", "--duration", "0.01", "--format", "bin",
          "--out-dir", str(tmp_path)])
    data = (tmp_path / "bob.bin").read_bytes()
    (tmp_path / "bob.bin").write_bytes(data[:-3])
    assert main(["analyze", str(tmp_path / "alice.bin"), str(tmp_path / "bob.bin"), "--out-dir", str(tmp_path)]) == 3
    assert "byte offset" in capsys.readouterr().err
    (tmp_path / "u.csv").write_text("# duration_ps=10\ntime_ps,channel\n5,0\n1,0\n")
    assert main(["analyze", str(tmp_path / "u.csv"), str(tmp_path / "u.csv"), "--out-dir", str(tmp_path)]) == 3
    assert main(["analyze", str(tmp_path / "u.csv"), str(tmp_path / "u.csv"), "--sort",
                 "--out-dir", str(tmp_path)]) == 0


def test_sync_demo_and_outage(tmp_path, capsys):
    assert main(["sync-demo", "--duration", "30", "--out-dir", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "sync_summary.json").read_text())["status"] == "ok"
    assert main(["sync-demo", "--duration", "30", "--outage-at", "10", "--out-dir", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "sync_summary.json").read_text())["status"] == "link_down"


def test_calibrate_command(tmp_path, capsys):
    assert main(["calibrate", "--out-dir", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "calibration_report.json").read_text())
    assert report["ok"] and report["worst_normalized_residual"] <= 1.0
    assert main(["reproduce", "table2", "--scenario", str(tmp_path / "calibrated.toml"),
                 "--out-dir", str(tmp_path / "t2")]) == 0


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "qcoexist.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "qcoexist" in out.stdout
