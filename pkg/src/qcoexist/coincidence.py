"""Coincidence counting, accidentals, peak search and sweeps over sorted tag streams."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numba
import numpy as np

from .errors import ConfigurationError, DegenerateError, NoPeakError, PreconditionError
from .synthesis import PS_PER_S, TagStream, expected_link_metrics

RESULT_COLUMNS = ("window_ps", "delay_ps", "coincidences", "accidentals", "singles_a", "singles_b", "car")


@dataclass(frozen=True)
class CoincidenceWindow:
    """Full-width window: a pair counts when |tB - tA - center_delay| <= width/2."""

    width_ps: float
    center_delay_ps: float = 0.0

    def __post_init__(self):
        if not (self.width_ps > 0 and math.isfinite(self.width_ps)):
            raise ConfigurationError(f"window width must be > 0, got {self.width_ps}")
        if not math.isfinite(self.center_delay_ps):
            raise ConfigurationError("window delay must be finite")


@dataclass(frozen=True)
class CoincidenceResult:
    coincidences: int
    accidentals: int
    singles_a: int
    singles_b: int
    duration_ps: int
    window_ps: float
    delay_ps: float

    @property
    def car_defined(self) -> bool:
        return self.accidentals > 0

    @property
    def car(self) -> float:
        """coincidences / accidentals; NaN when no accidentals were observed."""
        return self.coincidences / self.accidentals if self.accidentals > 0 else math.nan

    def rate(self, count: int) -> float:
        return count * PS_PER_S / self.duration_ps if self.duration_ps > 0 else math.nan

    def row(self) -> tuple:
        return (self.window_ps, self.delay_ps, self.coincidences, self.accidentals,
                self.singles_a, self.singles_b, self.car)


@dataclass(frozen=True)
class TimeDiffHistogram:
    bin_width_ps: float
    range_ps: tuple[float, float]
    bins: np.ndarray

    @property
    def centers_ps(self) -> np.ndarray:
        lo = self.range_ps[0]
        return lo + (np.arange(self.bins.size) + 0.5) * self.bin_width_ps

    @property
    def total(self) -> int:
        return int(self.bins.sum())


@numba.njit(cache=True)
def _greedy_count(a, b, delay, half):
    n = 0
    j = 0
    nb = b.size
    for i in range(a.size):
        lo = a[i] + delay - half
        hi = a[i] + delay + half
        while j < nb and b[j] < lo:
            j += 1
        if j < nb and b[j] <= hi:
            n += 1
            j += 1
    return n


@numba.njit(cache=True)
def _diff_histogram(a, b, lo, hi, bin_w, nbins):
    counts = np.zeros(nbins, dtype=np.int64)
    j0 = 0
    nb = b.size
    for i in range(a.size):
        while j0 < nb and b[j0] - a[i] < lo:
            j0 += 1
        j = j0
        while j < nb:
            d = b[j] - a[i]
            if d >= hi:
                break
            k = int((d - lo) // bin_w)
            if 0 <= k < nbins:
                counts[k] += 1
            j += 1
    return counts


def _check_sorted(s: TagStream, name: str) -> None:
    if not s.is_sorted():
        raise PreconditionError(f"stream {name} is not sorted by time")


def _duration(a: TagStream, b: TagStream) -> int:
    return max(a.duration_ps, b.duration_ps)


def _count(a: TagStream, b: TagStream, delay_ps: float, width_ps: float) -> int:
    if len(a) == 0 or len(b) == 0:
        return 0
    # Differences of int64 times are exact in float64 below 2**53 ps (~2.5 h).
    return int(_greedy_count(a.times_ps.astype(np.float64), b.times_ps.astype(np.float64),
                             float(delay_ps), float(width_ps) / 2.0))


def brute_force_coincidences(a: np.ndarray, b: np.ndarray, delay_ps: float, width_ps: float) -> int:
    """O(n*m) reference: each A tag in order takes the earliest unused B tag in its window."""
    b = np.asarray(b, dtype=np.int64)
    used = np.zeros(b.size, dtype=bool)
    half = width_ps / 2.0
    n = 0
    for ta in np.asarray(a, dtype=np.int64):
        # Full scan of B for every A tag; no use of sortedness.
        hit = np.flatnonzero(~used & (np.abs((b - ta).astype(np.float64) - delay_ps) <= half))
        if hit.size:
            used[hit[np.argmin(b[hit])]] = True
            n += 1
    return n


def default_shift_ps(width_ps: float) -> float:
    return max(20.0 * width_ps, 200_000.0)


def estimate_accidentals(a: TagStream, b: TagStream, w: CoincidenceWindow, shift_ps: float | None = None) -> int:
    """Coincidences in a window displaced by ``shift_ps`` from the peak."""
    shift = default_shift_ps(w.width_ps) if shift_ps is None else float(shift_ps)
    if abs(shift) < 10.0 * w.width_ps:
        raise PreconditionError(f"accidental shift {shift} ps is below 10 window widths ({10 * w.width_ps} ps)")
    _check_sorted(a, "a")
    _check_sorted(b, "b")
    return _count(a, b, w.center_delay_ps + shift, w.width_ps)


def count_coincidences(a: TagStream, b: TagStream, w: CoincidenceWindow, shift_ps: float | None = None) -> CoincidenceResult:
    """Greedy one-to-one coincidences plus a shifted-window accidental estimate."""
    _check_sorted(a, "a")
    _check_sorted(b, "b")
    return CoincidenceResult(
        coincidences=_count(a, b, w.center_delay_ps, w.width_ps),
        accidentals=estimate_accidentals(a, b, w, shift_ps),
        singles_a=len(a),
        singles_b=len(b),
        duration_ps=_duration(a, b),
        window_ps=float(w.width_ps),
        delay_ps=float(w.center_delay_ps),
    )


def time_diff_histogram(a: TagStream, b: TagStream, range_ps: float, bin_ps: float, center_ps: float = 0.0) -> TimeDiffHistogram:
    """All-pairs histogram of tB - tA within center +/- range."""
    if not (range_ps > 0 and bin_ps > 0):
        raise ConfigurationError("histogram range and bin width must be > 0")
    _check_sorted(a, "a")
    _check_sorted(b, "b")
    nbins = max(int(math.ceil(2.0 * range_ps / bin_ps)), 1)
    lo = center_ps - nbins * bin_ps / 2.0
    hi = lo + nbins * bin_ps
    if len(a) == 0 or len(b) == 0:
        counts = np.zeros(nbins, dtype=np.int64)
    else:
        counts = _diff_histogram(a.times_ps.astype(np.float64), b.times_ps.astype(np.float64),
                                 float(lo), float(hi), float(bin_ps), nbins)
    return TimeDiffHistogram(float(bin_ps), (float(lo), float(hi)), counts)


def find_peak_delay(
    a: TagStream,
    b: TagStream,
    search_range_ps: float,
    bin_ps: float,
    center_ps: float = 0.0,
    half_width_bins: int = 8,
    significance: float = 5.0,
) -> float:
    """Delay of the coincidence peak: background-subtracted centroid around the tallest bin."""
    h = time_diff_histogram(a, b, search_range_ps, bin_ps, center_ps)
    counts = h.bins.astype(float)
    if counts.size == 0 or counts.sum() == 0:
        raise NoPeakError("no time differences inside the search range")
    k = int(np.argmax(counts))  # first maximum = smallest delay on ties
    lo_k, hi_k = max(k - half_width_bins, 0), min(k + half_width_bins + 1, counts.size)
    outside = np.ones(counts.size, dtype=bool)
    outside[lo_k:hi_k] = False
    background = counts[outside].mean() if outside.any() else 0.0
    if counts[k] - background <= significance * math.sqrt(max(background, 1.0)):
        raise NoPeakError(
            f"no peak above {significance} sigma: max bin {counts[k]:.0f} vs mean {background:.1f}"
        )
    weights = np.clip(counts[lo_k:hi_k] - background, 0.0, None)
    centers = h.centers_ps[lo_k:hi_k]
    return float(np.sum(weights * centers) / np.sum(weights))


def sweep_windows(
    a: TagStream, b: TagStream, windows_ps: Sequence[float], delay_ps: float, shift_ps: float | None = None
) -> list[CoincidenceResult]:
    """One result per window width at a fixed delay; the accidental shift is shared."""
    windows = [float(w) for w in windows_ps]
    if not windows:
        raise ConfigurationError("window list is empty")
    shift = default_shift_ps(max(windows)) if shift_ps is None else shift_ps
    return [count_coincidences(a, b, CoincidenceWindow(w, delay_ps), shift) for w in windows]


@dataclass(frozen=True)
class LengthPoint:
    length_of_flight_km: float
    window_ps: float
    true_coincidence_cps: float
    accidental_cps: float
    singles_a_cps: float
    singles_b_cps: float
    car: float


def sweep_lengths(scenario, lengths_of_flight_km: Sequence[float], window_ps: float) -> list[LengthPoint]:
    """Analytic CAR and rates versus length of flight (arms scaled symmetrically)."""
    out = []
    for lof in lengths_of_flight_km:
        if lof < 0:
            raise ConfigurationError("length of flight must be >= 0")
        if scenario.distributed:
            s = replace(scenario, fiber_alice=replace(scenario.fiber_alice, length_km=lof / 2),
                        fiber_bob=replace(scenario.fiber_bob, length_km=lof / 2))
        else:
            s = replace(scenario, fiber_alice=replace(scenario.fiber_alice, length_km=lof / 2))
        m = expected_link_metrics(s, window_ps)
        out.append(LengthPoint(float(lof), float(window_ps), m.true_coincidence_cps, m.accidental_cps,
                               m.singles_a_cps, m.singles_b_cps, m.car))
    return out


def sweep(a=None, b=None, *, windows_ps=None, delay_ps=0.0, scenario=None, lengths_km=None, window_ps=2000.0,
          shift_ps=None):
    """Window sweep over measured streams or analytic length sweep over a scenario."""
    if windows_ps is not None:
        if a is None or b is None:
            raise ConfigurationError("window sweep needs two streams")
        return sweep_windows(a, b, windows_ps, delay_ps, shift_ps)
    if lengths_km is not None:
        if scenario is None:
            raise ConfigurationError("length sweep needs a scenario")
        return sweep_lengths(scenario, lengths_km, window_ps)
    raise ConfigurationError("give either windows_ps or lengths_km")


def car_or_raise(result: CoincidenceResult) -> float:
    if not result.car_defined:
        raise DegenerateError("no accidentals observed: CAR is undefined")
    return result.car
