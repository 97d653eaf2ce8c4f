from __future__ import annotations

import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from qcoexist.channel import (
    Band,
    BandAttenuation,
    ClassicalLinkSpec,
    FiberSpec,
    RamanNoiseModel,
    attenuation_db,
    break_even_length_km,
    calibrate_raman,
    classical_link_margin,
    link_is_up,
    raman_noise_rate,
    transmission,
)
from qcoexist.errors import CalibrationError, ConfigurationError


def _fiber(length, excess=3.0, c=0.20, o=0.33):
    return FiberSpec(length, BandAttenuation(c, o, excess))


def test_zero_length_is_lossless():
    assert attenuation_db(_fiber(0.0, excess=0.0), Band.C) == 0.0


def test_hundred_km_c_band():
    f = _fiber(100.0, excess=0.0)
    assert attenuation_db(f, "C") == pytest.approx(20.0, abs=1e-12)
    assert transmission(f, Band.C) == pytest.approx(0.01, rel=1e-12)


def test_o_band_penalty_over_c_band():
    f = _fiber(100.0, excess=0.0)
    assert attenuation_db(f, "O") - attenuation_db(f, "C") == pytest.approx(13.0, abs=1e-12)


@pytest.mark.parametrize(
    "sens,length,margin,up",
    [(-17.0, 25.0, 2.75, True), (-17.0, 50.0, -5.5, False), (-41.0, 100.0, 2.0, True)],
)
def test_link_budget_examples(sens, length, margin, up):
    link = ClassicalLinkSpec(1310.0 if sens == -17.0 else 1290.0, 1290.0 if sens == -17.0 else 1270.0, -3.0, sens)
    f = _fiber(length)
    assert classical_link_margin(link, f) == pytest.approx(margin, abs=1e-12)
    assert link_is_up(link, f) is up


def test_break_even_length():
    link = ClassicalLinkSpec(1290.0, 1270.0, -3.0, -41.0)
    lmax = break_even_length_km(link, BandAttenuation(0.2, 0.33, 3.0))
    assert lmax == pytest.approx(35.0 / 0.33)
    assert classical_link_margin(link, _fiber(lmax)) == pytest.approx(0.0, abs=1e-9)


def test_classical_wavelengths_must_be_o_band():
    with pytest.raises(ConfigurationError):
        ClassicalLinkSpec(1550.0, 1290.0, -3.0, -41.0)


def test_negative_length_rejected():
    with pytest.raises(ConfigurationError):
        FiberSpec(-1.0)


def test_raman_two_point_calibration():
    m = calibrate_raman([(50.0, 8500.0), (100.0, 32600.0)])
    assert m.growth_per_km == pytest.approx(math.log(32600 / 8500) / 50, rel=1e-12)
    assert m.growth_per_km == pytest.approx(0.02690, abs=5e-5)
    assert m.amplitude_cps == pytest.approx(2216.0, abs=1.0)
    assert raman_noise_rate(m, 50.0, 1290.0) == pytest.approx(8500.0, rel=1e-12)
    assert raman_noise_rate(m, 100.0, 1290.0) == pytest.approx(32600.0, rel=1e-12)


def test_raman_zero_length_is_amplitude():
    m = RamanNoiseModel(2216.0, 0.0269)
    assert raman_noise_rate(m, 0.0, 1290.0) == 2216.0


def test_raman_1310_is_tenfold():
    m = calibrate_raman([(50.0, 8500.0), (100.0, 32600.0)])
    assert raman_noise_rate(m, 100.0, 1310.0) == pytest.approx(326000.0, rel=1e-12)


def test_raman_doubling_length_quadruples():
    m = calibrate_raman([(50.0, 8500.0), (100.0, 34000.0)])
    assert m.growth_per_km == pytest.approx(math.log(4) / 50, rel=1e-12)


@pytest.mark.parametrize("pts", [[(50.0, 8500.0), (50.0, 9000.0)], [(50.0, 8500.0)], [(50.0, -1.0), (100.0, 1.0)],
                                 [(50.0, 9000.0), (100.0, 8500.0)]])
def test_raman_calibration_rejects_bad_points(pts):
    with pytest.raises(CalibrationError):
        calibrate_raman(pts)


@given(st.floats(10.0, 1e5), st.floats(1e-3, 0.1), st.floats(1.0, 80.0), st.floats(1.0, 80.0))
def test_raman_calibration_inverts_the_model(amp, growth, l1, dl):
    truth = RamanNoiseModel(amp, growth)
    pts = [(l1, raman_noise_rate(truth, l1, 1290.0)), (l1 + dl, raman_noise_rate(truth, l1 + dl, 1290.0))]
    m = calibrate_raman(pts)
    assert m.growth_per_km == pytest.approx(growth, rel=1e-8)
    assert m.amplitude_cps == pytest.approx(amp, rel=1e-6)


@given(st.floats(0.0, 300.0), st.floats(0.0, 300.0))
def test_raman_monotone_in_length(l1, l2):
    m = calibrate_raman([(50.0, 8500.0), (100.0, 32600.0)])
    lo, hi = sorted((l1, l2))
    assert raman_noise_rate(m, lo, 1290.0) <= raman_noise_rate(m, hi, 1290.0)


@given(st.floats(0.0, 500.0), st.floats(0.0, 500.0))
def test_margin_decreases_with_length(l1, l2):
    link = ClassicalLinkSpec()
    lo, hi = sorted((l1, l2))
    assert classical_link_margin(link, _fiber(lo)) >= classical_link_margin(link, _fiber(hi))
