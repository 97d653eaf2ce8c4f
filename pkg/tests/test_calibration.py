from __future__ import annotations

import copy

import pytest

from qcoexist.calibration import calibrate, peak_rate, predicted_chsh, predicted_visibilities
from qcoexist.channel import calibrate_raman, raman_noise_rate
from qcoexist.errors import CalibrationError


@pytest.fixture(scope="module")
def fresh(template):
    return calibrate(template)


def test_noise_only_anchors_reproduce_raman_fit(template):
    anchors = {"noise": [[50.0, 8500.0], [100.0, 32600.0]]}
    sf, report = calibrate(template, anchors)
    expected = calibrate_raman([(50.0, 8500.0), (100.0, 32600.0)])
    assert report.parameters["raman.amplitude_cps"] == expected.amplitude_cps
    assert report.parameters["raman.growth_per_km"] == expected.growth_per_km
    assert report.worst_normalized_residual == pytest.approx(0.0, abs=1e-9)
    assert sf.is_calibrated


def test_noise_anchors_recovered(fresh):
    sf, _ = fresh
    s = sf.scenario("noise_char_100km")
    assert raman_noise_rate(s.raman, 50.0, 0.0) == pytest.approx(8500.0, rel=1e-6)
    assert raman_noise_rate(s.raman, 100.0, 0.0) == pytest.approx(32600.0, rel=1e-6)


def test_rates_within_factor_two(fresh, template):
    sf, report = fresh
    for profile, target in template.anchors["rates"].items():
        r = peak_rate(sf.scenario(profile), 2000.0)
        assert target / 2 <= r <= target * 2
    assert report.within_tolerance


def test_visibility_and_chsh_inside_bands(fresh, template):
    sf, _ = fresh
    bases = sf.recipes["alice_bases_rad"]
    for profile, vs in template.anchors["visibility"].items():
        s = sf.scenario(profile)
        v = sum(predicted_visibilities(s, bases, 2000.0)) / len(bases)
        assert abs(v - sum(vs) / len(vs)) <= 0.05
        # sigma_S is the counting error of a simulated run with the recipe's integration time.
        target = template.anchors["chsh"][profile][0]
        res = predicted_chsh(s, sf.recipes["chsh_angles_rad"], 2000.0, sf.recipes["fringe_integration_s"])
        assert abs(res.s - target) <= 3 * res.sigma


def test_contradictory_anchors_raise(template):
    anchors = copy.deepcopy(template.anchors)
    anchors["rates"] = {"deployed_250m": 100.0, "spool_50km": 275.0, "spool_100km": 170.0}
    with pytest.raises(CalibrationError) as exc:
        calibrate(template, anchors)
    assert "contradictory" in str(exc.value)


def test_unreachable_anchors_raise(template):
    anchors = copy.deepcopy(template.anchors)
    anchors["visibility"]["spool_100km"] = [0.99] * 4
    anchors["chsh"]["spool_100km"] = [2.0, 0.01]
    with pytest.raises(CalibrationError):
        calibrate(template, anchors)


def test_missing_anchors_raise(template):
    with pytest.raises(CalibrationError):
        calibrate(template, {})


def test_shipped_calibration_is_current(fresh, calibrated):
    _, report = fresh
    assert calibrated.is_calibrated
    shipped = calibrated.calibration["parameters"]
    assert set(shipped) == set(report.parameters)
    for k, v in report.parameters.items():
        assert shipped[k] == pytest.approx(v, rel=1e-6), k
    assert calibrated.calibration["worst_normalized_residual"] == pytest.approx(report.worst_normalized_residual,
                                                                                rel=1e-6)


def test_template_is_not_calibrated(template):
    assert not template.is_calibrated
