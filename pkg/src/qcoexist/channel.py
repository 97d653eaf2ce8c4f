"""Fiber link physics: band attenuation, classical link budget and Raman noise."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import CalibrationError, ConfigurationError


class Band(str, Enum):
    C = "C"
    O = "O"


@dataclass(frozen=True)
class BandAttenuation:
    """Per-band fiber loss plus a lumped per-path excess loss."""

    c_band_db_per_km: float = 0.20
    o_band_db_per_km: float = 0.33
    excess_loss_db: float = 3.0

    def __post_init__(self):
        vals = (self.c_band_db_per_km, self.o_band_db_per_km, self.excess_loss_db)
        if not all(math.isfinite(v) and v >= 0 for v in vals):
            raise ConfigurationError(f"attenuation values must be finite and >= 0, got {vals}")
        if self.o_band_db_per_km < self.c_band_db_per_km:
            raise ConfigurationError("O-band attenuation must not be below C-band attenuation")


@dataclass(frozen=True)
class ClassicalLinkSpec:
    """Bidirectional O-band transceiver pair used for two-way time transfer."""

    tx_wavelength_nm: float = 1290.0
    rx_wavelength_nm: float = 1270.0
    launch_power_dbm: float = -3.0
    receiver_sensitivity_dbm: float = -41.0

    def __post_init__(self):
        for wl in (self.tx_wavelength_nm, self.rx_wavelength_nm):
            if not 1260.0 <= wl <= 1320.0:
                raise ConfigurationError(f"classical wavelength {wl} nm outside 1260-1320 nm")
        if not self.launch_power_dbm > self.receiver_sensitivity_dbm:
            raise ConfigurationError("launch power must exceed receiver sensitivity")


@dataclass(frozen=True)
class RamanNoiseModel:
    """Detected Raman noise rate A*exp(b*L) versus length-of-flight L."""

    amplitude_cps: float
    growth_per_km: float
    relative_scale_1310: float = 10.0

    def __post_init__(self):
        if not (self.amplitude_cps >= 0 and math.isfinite(self.amplitude_cps)):
            raise ConfigurationError("Raman amplitude must be >= 0")
        if not (self.growth_per_km >= 0 and math.isfinite(self.growth_per_km)):
            raise ConfigurationError("Raman growth rate must be >= 0")
        if not self.relative_scale_1310 >= 1:
            raise ConfigurationError("relative_scale_1310 must be >= 1")


@dataclass(frozen=True)
class FiberSpec:
    length_km: float
    attenuation: BandAttenuation = BandAttenuation()
    dispersion_spread_ps_per_km: float = 0.0

    def __post_init__(self):
        if not (self.length_km >= 0 and math.isfinite(self.length_km)):
            raise ConfigurationError(f"fiber length must be >= 0, got {self.length_km}")
        if not self.dispersion_spread_ps_per_km >= 0:
            raise ConfigurationError("dispersion spread must be >= 0")


def attenuation_db(fiber: FiberSpec, band: Band | str) -> float:
    """Total path loss in dB; transmission is ``10**(-dB/10)``."""
    band = Band(band)
    att = fiber.attenuation
    coef = att.c_band_db_per_km if band is Band.C else att.o_band_db_per_km
    return fiber.length_km * coef + att.excess_loss_db


def transmission(fiber: FiberSpec, band: Band | str) -> float:
    return 10.0 ** (-attenuation_db(fiber, band) / 10.0)


def classical_link_margin(link: ClassicalLinkSpec, fiber: FiberSpec) -> float:
    """Received power minus sensitivity (dB). The link is up iff this is >= 0."""
    return link.launch_power_dbm - attenuation_db(fiber, Band.O) - link.receiver_sensitivity_dbm


def link_is_up(link: ClassicalLinkSpec, fiber: FiberSpec) -> bool:
    # Both directions share the fiber and transceiver class, so one margin covers both.
    return classical_link_margin(link, fiber) >= 0.0


def break_even_length_km(link: ClassicalLinkSpec, attenuation: BandAttenuation) -> float:
    """Length at which the classical margin reaches exactly zero."""
    budget = link.launch_power_dbm - link.receiver_sensitivity_dbm - attenuation.excess_loss_db
    if attenuation.o_band_db_per_km == 0:
        return math.inf if budget >= 0 else 0.0
    return max(budget / attenuation.o_band_db_per_km, 0.0)


def calibrate_raman(
    points: Sequence[tuple[float, float]], relative_scale_1310: float = 10.0
) -> RamanNoiseModel:
    """Fit noise = A*exp(b*L) by least squares in log space.

    Two points give the exact interpolating exponential.
    """
    if len(points) < 2:
        raise CalibrationError("need at least two (length, rate) points")
    lengths = np.array([p[0] for p in points], dtype=float)
    rates = np.array([p[1] for p in points], dtype=float)
    if np.any(~np.isfinite(rates)) or np.any(rates <= 0):
        raise CalibrationError("noise rates must be positive", {"rates": rates.tolist()})
    if np.unique(lengths).size != lengths.size:
        raise CalibrationError("calibration lengths must be distinct", {"lengths": lengths.tolist()})
    if lengths.size == 2:
        b = math.log(rates[1] / rates[0]) / (lengths[1] - lengths[0])
        a = rates[0] / math.exp(b * lengths[0])
    else:
        slope, intercept = np.polyfit(lengths, np.log(rates), 1)
        b, a = float(slope), math.exp(float(intercept))
    if not b > 0:
        raise CalibrationError(
            "noise does not grow with length; exponential model needs b > 0", {"growth_per_km": b}
        )
    return RamanNoiseModel(amplitude_cps=a, growth_per_km=b, relative_scale_1310=relative_scale_1310)


def raman_noise_rate(model: RamanNoiseModel, length_of_flight_km: float, tx_wavelength_nm: float) -> float:
    """Detected Raman noise (counts/s) in the quantum channel."""
    if length_of_flight_km < 0:
        raise ConfigurationError("length of flight must be >= 0")
    rate = model.amplitude_cps * math.exp(model.growth_per_km * length_of_flight_km)
    if tx_wavelength_nm >= 1300.0:
        rate *= model.relative_scale_1310
    return rate
