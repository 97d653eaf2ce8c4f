"""Seeded Monte Carlo time-tag synthesis and the matching closed-form rates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numba
import numpy as np
from scipy.special import erf

from .errors import ConfigurationError, DegenerateError
from .scenario import ClockSpec, DetectorSpec, LinkScenario, SourceSpec  # noqa: F401  (re-export)
from .states import fringe_visibility

PS_PER_S = 1_000_000_000_000
CHANNEL = {"alice": 0, "bob": 1}

# Fixed sub-stream keys; runs and sync sessions built from the same seed share clocks.
KEY_PAIRS, KEY_NOISE_A, KEY_NOISE_B, KEY_CLOCK_A, KEY_CLOCK_B, KEY_SYNC = range(1, 7)

Seed = int | Sequence[int]


def seed_sequence(seed: Seed, *keys: int) -> np.random.SeedSequence:
    entropy = [int(s) for s in seed] if isinstance(seed, (list, tuple)) else int(seed)
    return np.random.SeedSequence(entropy, spawn_key=tuple(keys))


def point_seed(seed: Seed, index: int) -> tuple[int, ...]:
    """Independent seed for sweep point ``index``; parallel order never matters."""
    base = list(seed) if isinstance(seed, (list, tuple)) else [int(seed)]
    return (*base, int(index))


@dataclass(frozen=True)
class TimeTag:
    time_ps: int
    node_id: str
    channel: int


@dataclass(frozen=True, eq=False)
class TagStream:
    """Click times (integer ps, node-local clock) for one node, sorted ascending."""

    times_ps: np.ndarray
    channels: np.ndarray
    duration_ps: int
    node_id: str = "alice"

    def __post_init__(self):
        t = np.ascontiguousarray(self.times_ps, dtype=np.int64)
        c = np.ascontiguousarray(self.channels, dtype=np.uint8)
        if t.shape != c.shape or t.ndim != 1:
            raise ConfigurationError("times and channels must be equal-length 1-D arrays")
        if t.size and t.min() < 0:
            raise ConfigurationError("tag times must be >= 0")
        t.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "times_ps", t)
        object.__setattr__(self, "channels", c)
        object.__setattr__(self, "duration_ps", int(self.duration_ps))

    @classmethod
    def empty(cls, duration_ps: int = 0, node_id: str = "alice") -> "TagStream":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.uint8), duration_ps, node_id)

    def __len__(self) -> int:
        return int(self.times_ps.size)

    def __iter__(self) -> Iterator[TimeTag]:
        for t, c in zip(self.times_ps.tolist(), self.channels.tolist()):
            yield TimeTag(t, self.node_id, c)

    @property
    def duration_s(self) -> float:
        return self.duration_ps / PS_PER_S

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.times_ps) >= 0))

    def sorted(self) -> "TagStream":
        order = np.argsort(self.times_ps, kind="stable")
        return TagStream(self.times_ps[order], self.channels[order], self.duration_ps, self.node_id)

    def shifted(self, offset_ps: int) -> "TagStream":
        return TagStream(self.times_ps + int(offset_ps), self.channels, self.duration_ps, self.node_id)

    def equals(self, other: "TagStream") -> bool:
        return (
            self.duration_ps == other.duration_ps
            and np.array_equal(self.times_ps, other.times_ps)
            and np.array_equal(self.channels, other.channels)
        )


class ClockPath:
    """One realization of a node clock: local = t*(1 + drift) + offset + W(t).

    W is a Brownian path pinned at W(0) = 0 and sampled on a fixed grid, each
    chunk of the grid seeded independently, so the realization at a given true
    time does not depend on which span was requested (negative times included).
    """

    GRID_PS = 10_000_000_000  # 10 ms
    CHUNK = 1024

    def __init__(self, spec: ClockSpec, seed_seq: np.random.SeedSequence):
        self.spec = spec
        self._ss = seed_seq
        self._step_sigma = spec.random_walk_ps_per_sqrt_s * math.sqrt(self.GRID_PS / PS_PER_S)
        self._starts: dict[int, float] = {0: 0.0}
        self._cums: dict[int, np.ndarray] = {}

    def _chunk_cum(self, c: int) -> np.ndarray:
        if c not in self._cums:
            code = 2 * c if c >= 0 else -2 * c - 1
            ss = np.random.SeedSequence(self._ss.entropy, spawn_key=(*self._ss.spawn_key, code))
            inc = np.random.default_rng(ss).normal(0.0, self._step_sigma, self.CHUNK)
            self._cums[c] = np.concatenate(([0.0], np.cumsum(inc)))
        return self._cums[c]

    def _start(self, c: int) -> float:
        if c in self._starts:
            return self._starts[c]
        step = 1 if c > 0 else -1
        k = c
        while k - step not in self._starts:
            k -= step
        # Walk from the nearest known chunk start towards c.
        while k != c + step:
            prev = k - step
            if step > 0:
                self._starts[k] = self._starts[prev] + self._chunk_cum(prev)[-1]
            else:
                self._starts[k] = self._starts[prev] - self._chunk_cum(k)[-1]
            k += step
        return self._starts[c]

    def _grid_values(self, g: np.ndarray) -> np.ndarray:
        chunk = np.floor_divide(g, self.CHUNK)
        out = np.empty(g.shape, dtype=float)
        for c in np.unique(chunk).tolist():
            sel = chunk == c
            out[sel] = self._start(c) + self._chunk_cum(c)[g[sel] - c * self.CHUNK]
        return out

    def walk(self, t_true_ps) -> np.ndarray:
        t = np.asarray(t_true_ps, dtype=float)
        if self._step_sigma == 0.0 or t.size == 0:
            return np.zeros(t.shape)
        pos = t / self.GRID_PS
        g0 = np.floor(pos).astype(np.int64)
        frac = pos - g0
        w0 = self._grid_values(g0)
        w1 = self._grid_values(g0 + 1)
        return w0 + frac * (w1 - w0)

    def offset(self, t_true_ps) -> np.ndarray:
        """Local minus true time (ps)."""
        t = np.asarray(t_true_ps, dtype=float)
        return t * (self.spec.drift_ppm * 1e-6) + self.spec.initial_offset_ps + self.walk(t)

    def local(self, t_true_ps) -> np.ndarray:
        t = np.asarray(t_true_ps, dtype=float)
        return t + self.offset(t)

    __call__ = local


@numba.njit(cache=True)
def _dead_time_mask(times, channels, dead_time):
    keep = np.zeros(times.size, dtype=np.bool_)
    last = np.full(256, np.iinfo(np.int64).min // 2, dtype=np.int64)
    for i in range(times.size):
        c = channels[i]
        if times[i] - last[c] >= dead_time:
            keep[i] = True
            last[c] = times[i]
    return keep


def dead_time_filter(times: np.ndarray, channels: np.ndarray, dead_time_ps: float) -> np.ndarray:
    """Non-paralyzable dead time: boolean mask of clicks that register."""
    if times.size == 0:
        return np.zeros(0, dtype=bool)
    return _dead_time_mask(times.astype(np.int64), channels.astype(np.uint8), np.int64(math.ceil(dead_time_ps)))


def apply_clock(stream: TagStream, clock: ClockSpec | ClockPath, seed: Seed = 0) -> TagStream:
    """Map true-time tags into a node's local timebase; negative results are dropped."""
    path = clock if isinstance(clock, ClockPath) else ClockPath(clock, seed_sequence(seed))
    local = np.rint(path.local(stream.times_ps)).astype(np.int64)
    keep = local >= 0
    local, ch = local[keep], stream.channels[keep]
    order = np.argsort(local, kind="stable")
    return TagStream(local[order], ch[order], stream.duration_ps, stream.node_id)


def clock_paths(scenario: LinkScenario, seed: Seed) -> tuple[ClockPath, ClockPath]:
    """Clock realizations for (Alice, Bob). A shared tagger gives both the same path."""
    a = ClockPath(scenario.clock_a, seed_sequence(seed, KEY_CLOCK_A))
    if not scenario.needs_sync():
        return a, a
    return a, ClockPath(scenario.clock_b, seed_sequence(seed, KEY_CLOCK_B))


def detection_probabilities(scenario: LinkScenario) -> tuple[float, float, float]:
    """(P(Alice port passes), P(Bob port passes), P(both pass)) for one pair."""
    if not scenario.distributed:
        return 1.0, 1.0, 1.0
    rho = scenario.source.state.rho
    pa_proj = np.kron(scenario.analyzer_a.projector(), np.eye(2))
    pb_proj = np.kron(np.eye(2), scenario.analyzer_b.projector())
    pa = float(np.real(np.trace(rho @ pa_proj)))
    pb = float(np.real(np.trace(rho @ pb_proj)))
    p11 = float(np.real(np.trace(rho @ pa_proj @ pb_proj)))
    clip = lambda x: min(max(x, 0.0), 1.0)  # noqa: E731
    return clip(pa), clip(pb), clip(min(p11, pa, pb))


@dataclass
class GroundTruth:
    """What actually happened in a synthesized run."""

    seed: Seed
    duration_ps: int
    true_pairs: int
    differential_delay_ps: float
    peak_sigma_ps: float
    categories: dict[str, dict[str, int]]
    dropped_negative: dict[str, int]
    dead_time_removed: dict[str, int]
    clock_trajectory: dict[str, list[float]]
    clocks: tuple[ClockPath, ClockPath] = field(repr=False, default=None)

    def emitted(self, node: str) -> int:
        return sum(self.categories[node].values())


_CATS = ("pair", "pair_unpartnered", "raman", "dark")


def _poisson_times(rng, rate_cps: float, lo_ps: float, hi_ps: float) -> np.ndarray:
    span = hi_ps - lo_ps
    n = rng.poisson(rate_cps * span / PS_PER_S) if rate_cps > 0 and span > 0 else 0
    return rng.uniform(lo_ps, hi_ps, n)


def synthesize_run(scenario: LinkScenario, duration_s: float, seed: Seed) -> tuple[TagStream, TagStream, GroundTruth]:
    """Generate Alice's and Bob's tag streams for ``duration_s`` of acquisition."""
    if not (duration_s > 0 and math.isfinite(duration_s)):
        raise ConfigurationError(f"duration must be > 0, got {duration_s}")
    T = int(round(duration_s * PS_PER_S))
    src = scenario.source
    eta_a, eta_b = scenario.arm_efficiency("alice"), scenario.arm_efficiency("bob")
    pa, pb, p11 = detection_probabilities(scenario)
    rate_both = src.pair_rate_cps * eta_a * eta_b * p11
    rate_a_only = max(src.pair_rate_cps * eta_a * (pa - eta_b * p11), 0.0)
    rate_b_only = max(src.pair_rate_cps * eta_b * (pb - eta_a * p11), 0.0)

    fa, fb = scenario.photon_fibers()
    delay_a = scenario.propagation_delay_ps(fa.length_km) + scenario.detector_a.latency_ps
    delay_b = scenario.propagation_delay_ps(fb.length_km) + scenario.detector_b.latency_ps
    sig_a = math.hypot(scenario.detector_a.jitter_sigma_ps, fa.dispersion_spread_ps_per_km * fa.length_km)
    sig_b = math.hypot(scenario.detector_b.jitter_sigma_ps, fb.dispersion_spread_ps_per_km * fb.length_km)
    # Emit early enough that the detected process is stationary from t = 0.
    lead = max(delay_a, delay_b) + 10.0 * max(sig_a, sig_b) + 1.0

    rng = np.random.default_rng(seed_sequence(seed, KEY_PAIRS))
    e_both = _poisson_times(rng, rate_both, -lead, T)
    e_a = _poisson_times(rng, rate_a_only, -lead, T)
    e_b = _poisson_times(rng, rate_b_only, -lead, T)
    ta_both = e_both + delay_a + rng.normal(0.0, sig_a, e_both.size)
    tb_both = e_both + delay_b + rng.normal(0.0, sig_b, e_both.size)
    ta_single = e_a + delay_a + rng.normal(0.0, sig_a, e_a.size)
    tb_single = e_b + delay_b + rng.normal(0.0, sig_b, e_b.size)
    in_a = (ta_both >= 0) & (ta_both < T)
    in_b = (tb_both >= 0) & (tb_both < T)
    true_pairs = int(np.count_nonzero(in_a & in_b))

    raman = scenario.raman_rate_cps()
    paths = clock_paths(scenario, seed)
    streams, cats, dropped, removed = [], {}, {}, {}
    for node, key, det, t_pair, t_single, path in (
        ("alice", KEY_NOISE_A, scenario.detector_a, ta_both[in_a], ta_single, paths[0]),
        ("bob", KEY_NOISE_B, scenario.detector_b, tb_both[in_b], tb_single, paths[1]),
    ):
        nrng = np.random.default_rng(seed_sequence(seed, key))
        t_single = t_single[(t_single >= 0) & (t_single < T)]
        t_raman = _poisson_times(nrng, raman, 0.0, T)
        t_dark = _poisson_times(nrng, det.dark_rate_cps, 0.0, T)
        cats[node] = dict(zip(_CATS, (t_pair.size, t_single.size, t_raman.size, t_dark.size)))
        true_t = np.concatenate((t_pair, t_single, t_raman, t_dark))
        local = np.rint(path.local(true_t)).astype(np.int64)
        ok = local >= 0
        dropped[node] = int(np.count_nonzero(~ok))
        local = np.sort(local[ok], kind="stable")
        ch = np.full(local.size, CHANNEL[node], dtype=np.uint8)
        keep = dead_time_filter(local, ch, det.dead_time_ps)
        removed[node] = int(local.size - np.count_nonzero(keep))
        streams.append(TagStream(local[keep], ch[keep], T, node))

    grid = np.linspace(0.0, T, 11)
    truth = GroundTruth(
        seed=seed,
        duration_ps=T,
        true_pairs=true_pairs,
        differential_delay_ps=delay_b - delay_a,
        peak_sigma_ps=math.hypot(sig_a, sig_b),
        categories=cats,
        dropped_negative=dropped,
        dead_time_removed=removed,
        clock_trajectory={
            "t_s": (grid / PS_PER_S).tolist(),
            "alice_ps": paths[0].offset(grid).tolist(),
            "bob_ps": paths[1].offset(grid).tolist(),
        },
        clocks=paths,
    )
    return streams[0], streams[1], truth


@dataclass(frozen=True)
class LinkMetrics:
    """Closed-form expected rates (counts/s) for one scenario and window."""

    window_ps: float
    raw_singles_a_cps: float
    raw_singles_b_cps: float
    singles_a_cps: float
    singles_b_cps: float
    noise_a_cps: float
    noise_b_cps: float
    true_coincidence_cps: float
    accidental_cps: float
    capture_fraction: float
    car: float
    car_unbounded: bool
    visibility: float

    @property
    def coincidence_cps(self) -> float:
        """Total expected counts in the window (true plus accidental)."""
        return self.true_coincidence_cps + self.accidental_cps


def capture_fraction(window_ps: float, sigma_ps: float) -> float:
    """Fraction of a centred Gaussian peak inside a full-width window."""
    if sigma_ps <= 0:
        return 1.0
    return float(erf((window_ps / 2.0) / (math.sqrt(2.0) * sigma_ps)))


def expected_link_metrics(scenario: LinkScenario, window_ps: float) -> LinkMetrics:
    if not window_ps > 0:
        raise ConfigurationError("window must be > 0")
    src = scenario.source
    eta_a, eta_b = scenario.arm_efficiency("alice"), scenario.arm_efficiency("bob")
    pa, pb, p11 = detection_probabilities(scenario)
    raman = scenario.raman_rate_cps()
    noise_a = raman + scenario.detector_a.dark_rate_cps
    noise_b = raman + scenario.detector_b.dark_rate_cps
    raw_a = src.pair_rate_cps * eta_a * pa + noise_a
    raw_b = src.pair_rate_cps * eta_b * pb + noise_b
    if raw_a <= 0 or raw_b <= 0:
        raise DegenerateError("zero singles: CAR is undefined")
    surv_a = 1.0 / (1.0 + raw_a * scenario.detector_a.dead_time_ps / PS_PER_S)
    surv_b = 1.0 / (1.0 + raw_b * scenario.detector_b.dead_time_ps / PS_PER_S)
    sing_a, sing_b = raw_a * surv_a, raw_b * surv_b
    f = capture_fraction(window_ps, scenario.peak_sigma_ps())
    pair_both = src.pair_rate_cps * eta_a * eta_b * f * surv_a * surv_b
    true = pair_both * p11
    acc = sing_a * sing_b * window_ps / PS_PER_S
    if acc > 0:
        car, unbounded = (true + acc) / acc, False
    else:
        car, unbounded = math.inf, True
    if scenario.distributed and pair_both > 0:
        vis = fringe_visibility(src.state, scenario.analyzer_a, background=acc / pair_both)
    else:
        vis = math.nan
    return LinkMetrics(
        window_ps=float(window_ps),
        raw_singles_a_cps=raw_a,
        raw_singles_b_cps=raw_b,
        singles_a_cps=sing_a,
        singles_b_cps=sing_b,
        noise_a_cps=noise_a,
        noise_b_cps=noise_b,
        true_coincidence_cps=true,
        accidental_cps=acc,
        capture_fraction=f,
        car=car,
        car_unbounded=unbounded,
        visibility=vis,
    )
