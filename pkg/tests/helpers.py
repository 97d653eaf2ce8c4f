"""Scenario builders shared by tests."""

from __future__ import annotations

import math
from dataclasses import replace

from qcoexist.channel import BandAttenuation, FiberSpec, RamanNoiseModel
from qcoexist.scenario import ClockSpec, DetectorSpec, LinkScenario
from qcoexist.states import AnalyzerSetting


def ideal_detector(latency_ps: float = 0.0) -> DetectorSpec:
    return DetectorSpec(efficiency=1.0, dark_rate_cps=0.0, jitter_sigma_ps=0.0, dead_time_ps=0.0, latency_ps=latency_ps)


def noiseless(s: LinkScenario, pair_rate: float = 1e4, latency_b: float = 7500.0, length_km: float = 0.0) -> LinkScenario:
    """Lossless, jitter-free, noise-free link with perfect clocks at maximum correlation."""
    fiber = FiberSpec(length_km, BandAttenuation(0.0, 0.33, 0.0), 0.0)
    src = replace(s.source, pair_rate_cps=pair_rate, coupling_efficiency=1.0, visibility=1.0, state=None)
    return replace(
        s, source=src, fiber_alice=fiber, fiber_bob=fiber, raman=RamanNoiseModel(0.0, 0.0),
        detector_a=ideal_detector(), detector_b=ideal_detector(latency_b),
        clock_a=ClockSpec(), clock_b=ClockSpec(), analyzer_insertion_loss_db=0.0,
        analyzer_a=AnalyzerSetting(0.0), analyzer_b=AnalyzerSetting(math.pi / 2),
    )


def noise_only(s: LinkScenario, dark_cps: float, dead_time_ps: float = 0.0) -> LinkScenario:
    det = DetectorSpec(efficiency=0.85, dark_rate_cps=dark_cps, jitter_sigma_ps=0.0, dead_time_ps=dead_time_ps)
    return replace(
        s, source=replace(s.source, pair_rate_cps=0.0, state=None), raman=RamanNoiseModel(0.0, 0.0),
        detector_a=det, detector_b=det, clock_a=ClockSpec(), clock_b=ClockSpec(),
    )
