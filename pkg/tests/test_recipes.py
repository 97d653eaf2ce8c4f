from __future__ import annotations

import copy
import json
from dataclasses import replace

import pytest

from qcoexist.errors import ConfigurationError, LinkDownError
from qcoexist.recipes import FIGURES, RECIPES, acquire, reproduce, sha256_text
from qcoexist.scenario import ScenarioFile


def small(sf: ScenarioFile, **recipes) -> ScenarioFile:
    out = copy.deepcopy(sf)
    out.recipes.update({"fringe_points": 8, "table1_profiles": ["deployed_250m"], "delay_calibration_s": 0.5,
                        "tomography_profiles": ["deployed_250m"], "tomography_integration_s": 0.2,
                        "window_sweep_duration_s": 1.0, "sync_demo_duration_s": 20.0})
    out.recipes.update(recipes)
    return out


def test_every_figure_has_a_recipe():
    assert set(FIGURES) == set(RECIPES)


def test_table2_matrix(calibrated, tmp_path):
    out = reproduce("table2", calibrated, out_dir=tmp_path)
    m = out.summary["feasibility"]
    assert m["1310/1290nm@-17dBm"] == {"25.0": "UP", "50.0": "DOWN", "100.0": "DOWN"}
    assert m["1290/1270nm@-41dBm"] == {"25.0": "UP", "50.0": "UP", "100.0": "UP"}


def test_car_recipe(calibrated):
    out = reproduce("car_vs_length_fig6", calibrated)
    assert out.summary["monotone_decreasing"]
    assert out.summary["car"]["120.0"] >= 10.0
    assert "car_vs_length.csv" in out.files


def test_manifest_lists_every_file(calibrated, tmp_path):
    sf = small(calibrated)
    out = reproduce("sync_demo", sf, seed=1, out_dir=tmp_path)
    listed = {f["path"]: f["sha256"] for f in out.manifest["files"]}
    assert set(listed) == {"sync_residual.csv", "summary.json"}
    for name, sha in listed.items():
        assert sha256_text((tmp_path / name).read_text()) == sha
    on_disk = json.loads((tmp_path / "manifest.json").read_text())
    assert on_disk["seed"] == 1 and on_disk["scenario_digest"] == sf.digest() != calibrated.digest()


def test_reproduce_is_deterministic(calibrated):
    sf = small(calibrated)
    a = reproduce("window_sweep_fig7", sf, seed=3)
    b = reproduce("window_sweep_fig7", sf, seed=3)
    assert a.files == b.files and a.manifest == b.manifest


def test_workers_do_not_change_results(calibrated):
    sf = small(calibrated)
    one = reproduce("table1", sf, seed=2, workers=1)
    two = reproduce("table1", sf, seed=2, workers=2)
    assert one.files == two.files


def test_tomography_recipe_outputs(calibrated):
    out = reproduce("tomography_fig5", small(calibrated), seed=0)
    assert set(out.files) == {"tomography_counts_deployed_250m.csv", "density_matrix_deployed_250m.json",
                              "summary.json"}
    rho = json.loads(out.files["density_matrix_deployed_250m.json"])["rho_row_major"]
    assert len(rho) == 16
    assert out.summary["profiles"]["deployed_250m"]["converged"]


def test_uncalibrated_file_is_refused(template):
    with pytest.raises(ConfigurationError):
        reproduce("table2", template)
    assert reproduce("table2", template, require_calibrated=False).summary


def test_unknown_figure(calibrated):
    with pytest.raises(ConfigurationError):
        reproduce("fig99", calibrated)


def test_down_link_is_explained(calibrated):
    s = calibrated.scenario("spool_100km")
    s = replace(s, classical=replace(s.classical, tx_wavelength_nm=1310.0, rx_wavelength_nm=1290.0,
                                     receiver_sensitivity_dbm=-17.0))
    with pytest.raises(LinkDownError, match="receiver sensitivity"):
        acquire(s, 0.1, seed=0)
