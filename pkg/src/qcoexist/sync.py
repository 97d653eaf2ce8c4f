"""Two-way time transfer between Alice's (leader) and Bob's (follower) time taggers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .channel import classical_link_margin
from .errors import ConfigurationError, LinkDownError
from .scenario import LinkScenario
from .synthesis import KEY_SYNC, PS_PER_S, Seed, TagStream, clock_paths, seed_sequence

Clock = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SyncExchange:
    """Leader send, follower receive, follower send, leader receive (local integer ps)."""

    t1: int
    t2: int
    t3: int
    t4: int

    def __post_init__(self):
        if self.t4 < self.t1 or self.t3 < self.t2:
            raise ConfigurationError(f"inconsistent exchange timestamps {self}")


@dataclass(frozen=True)
class DelayAsymmetry:
    forward_delay_ps: float
    reverse_delay_ps: float

    def __post_init__(self):
        if not (self.forward_delay_ps > 0 and self.reverse_delay_ps > 0):
            raise ConfigurationError("one-way delays must be > 0")

    @property
    def asymmetry_ps(self) -> float:
        return self.forward_delay_ps - self.reverse_delay_ps


@dataclass
class ServoState:
    estimated_offset_ps: float = 0.0
    estimated_rtt_ps: float = 0.0
    proportional_gain: float = 0.5
    integral_gain: float = 0.1
    accumulated_integral: float = 0.0  # frequency correction, ps per ps

    def __post_init__(self):
        if not (self.proportional_gain > 0 and self.integral_gain > 0):
            raise ConfigurationError("servo gains must be > 0")


def _half_even(num: int) -> int:
    q, r = divmod(num, 2)
    if r and q % 2:
        q += 1
    return q


def estimate_offset_delay(x: SyncExchange) -> tuple[int, int]:
    """(follower-minus-leader offset, round-trip time) with exact integer arithmetic."""
    fwd = x.t2 - x.t1
    rev = x.t4 - x.t3
    return _half_even(fwd - rev), fwd + rev


def perform_exchange(
    leader_clock: Clock,
    follower_clock: Clock,
    link: DelayAsymmetry,
    true_time_ps: float,
    timestamp_jitter_ps: float = 0.0,
    seed: Seed | np.random.Generator = 0,
    turnaround_ps: float = 1_000_000.0,
    margin_db: float | None = None,
) -> SyncExchange:
    """Simulate one timestamp exchange started by the leader at ``true_time_ps``."""
    if margin_db is not None and margin_db < 0:
        raise LinkDownError(f"classical link margin {margin_db:.2f} dB is negative; exchange unavailable")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed_sequence(seed, KEY_SYNC))
    jit = rng.normal(0.0, timestamp_jitter_ps, 4) if timestamp_jitter_ps > 0 else np.zeros(4)
    t_send = float(true_time_ps)
    t_recv = t_send + link.forward_delay_ps
    t_back = t_recv + turnaround_ps
    t_done = t_back + link.reverse_delay_ps
    stamps = (
        leader_clock(np.array([t_send]))[0] + jit[0],
        follower_clock(np.array([t_recv]))[0] + jit[1],
        follower_clock(np.array([t_back]))[0] + jit[2],
        leader_clock(np.array([t_done]))[0] + jit[3],
    )
    return SyncExchange(*(int(np.rint(s)) for s in stamps))


@dataclass(frozen=True)
class CorrectionMap:
    """Piecewise-linear correction of follower raw local time onto the leader timebase.

    For raw local time u in segment k: corrected = u - (phase[k] + freq[k] * (u - start[k])).
    """

    start_ps: np.ndarray
    phase_ps: np.ndarray
    freq: np.ndarray

    def correction(self, raw_ps) -> np.ndarray:
        u = np.asarray(raw_ps, dtype=float)
        if self.start_ps.size == 0:
            return np.zeros(u.shape)
        k = np.searchsorted(self.start_ps, u, side="right") - 1
        before = k < 0
        k = np.clip(k, 0, None)
        corr = self.phase_ps[k] + self.freq[k] * (u - self.start_ps[k])
        return np.where(before, 0.0, corr)

    def apply(self, raw_ps) -> np.ndarray:
        u = np.asarray(raw_ps, dtype=float)
        return u - self.correction(u)

    def apply_stream(self, stream: TagStream) -> TagStream:
        """Corrected, re-sorted copy of a follower stream; tags mapped before zero are dropped."""
        t = np.rint(self.apply(stream.times_ps)).astype(np.int64)
        keep = t >= 0
        t, ch = t[keep], stream.channels[keep]
        order = np.argsort(t, kind="stable")
        return TagStream(t[order], ch[order], stream.duration_ps, stream.node_id)


IDENTITY_MAP = CorrectionMap(np.zeros(0), np.zeros(0), np.zeros(0))


@dataclass
class SyncSession:
    times_s: np.ndarray
    residual_ps: np.ndarray
    correction: CorrectionMap
    status: str = "ok"
    exchanges: list[SyncExchange] = field(default_factory=list, repr=False)
    estimated_rtt_ps: float = math.nan

    def steady_state(self) -> np.ndarray:
        """Residuals during acquisition (true time >= 0), after the warm-up."""
        return self.residual_ps[self.times_s >= 0.0]

    def residual_mean_ps(self) -> float:
        r = self.steady_state()
        return float(r.mean()) if r.size else math.nan

    def residual_std_ps(self) -> float:
        r = self.steady_state()
        return float(r.std(ddof=1)) if r.size > 1 else math.nan

    def residual_max_abs_ps(self) -> float:
        r = self.steady_state()
        return float(np.abs(r).max()) if r.size else math.nan


def link_delays(scenario: LinkScenario) -> DelayAsymmetry:
    """One-way delays of the classical path; the reverse wavelength travels slower."""
    fiber = scenario.classical_fiber()
    base = scenario.propagation_delay_ps(fiber.length_km)
    asym = scenario.sync.asymmetry_ps_per_km * fiber.length_km
    # A zero-length path still has a finite electronic delay.
    base = max(base, 1.0)
    return DelayAsymmetry(base, base + asym)


def run_sync_session(
    scenario: LinkScenario,
    duration_s: float,
    exchange_interval_s: float | None = None,
    seed: Seed = 0,
    outage_at_s: float | None = None,
) -> SyncSession:
    """Discipline Bob's timebase to Alice's with a PI servo over ``duration_s``.

    Exchanges start ``warmup_exchanges`` intervals before acquisition (t = 0) so
    the servo has settled when tags are recorded.
    """
    cfg = scenario.sync
    interval = cfg.exchange_interval_s if exchange_interval_s is None else float(exchange_interval_s)
    if not (interval > 0 and duration_s > 0):
        raise ConfigurationError("duration and exchange interval must be > 0")
    margin = classical_link_margin(scenario.classical, scenario.classical_fiber())
    if margin < 0:
        raise LinkDownError(
            f"classical link is down (margin {margin:.2f} dB at {scenario.classical_fiber().length_km:.1f} km "
            f"with {scenario.classical.receiver_sensitivity_dbm} dBm receivers); time transfer unavailable"
        )
    leader, follower_raw = clock_paths(scenario, seed)
    link = link_delays(scenario)
    known_asym = cfg.asymmetry_correction * link.asymmetry_ps / 2.0
    rng = np.random.default_rng(seed_sequence(seed, KEY_SYNC))
    interval_ps = interval * PS_PER_S
    servo = ServoState(proportional_gain=cfg.proportional_gain, integral_gain=cfg.integral_gain)

    starts: list[float] = []
    phases: list[float] = []
    freqs: list[float] = []
    times: list[float] = []
    resid: list[float] = []
    exchanges: list[SyncExchange] = []
    status = "ok"

    def current() -> CorrectionMap:
        return CorrectionMap(np.array(starts), np.array(phases), np.array(freqs))

    n_total = cfg.warmup_exchanges + int(math.floor(duration_s / interval)) + 1
    t0 = -cfg.warmup_exchanges * interval_ps
    for k in range(n_total):
        T = t0 + k * interval_ps
        if outage_at_s is not None and T >= outage_at_s * PS_PER_S:
            status = "link_down"
            break
        cmap = current()

        def follower(t, _m=cmap):
            return _m.apply(follower_raw.local(t))

        x = perform_exchange(leader.local, follower, link, T, cfg.timestamp_jitter_ps, rng, cfg.turnaround_ps)
        exchanges.append(x)
        theta, rtt = estimate_offset_delay(x)
        theta = theta - known_asym
        servo.estimated_offset_ps, servo.estimated_rtt_ps = float(theta), float(rtt)
        # The update takes effect once the exchange has completed.
        t_apply = T + link.forward_delay_ps + cfg.turnaround_ps + link.reverse_delay_ps
        u_apply = float(follower_raw.local(np.array([t_apply]))[0])
        c_now = float(cmap.correction(np.array([u_apply]))[0])
        servo.accumulated_integral += servo.integral_gain * theta / interval_ps
        starts.append(u_apply)
        phases.append(c_now + servo.proportional_gain * theta)
        freqs.append(servo.accumulated_integral)
        corrected = u_apply - phases[-1]
        times.append(t_apply / PS_PER_S)
        resid.append(corrected - float(leader.local(np.array([t_apply]))[0]))

    return SyncSession(
        times_s=np.array(times),
        residual_ps=np.array(resid),
        correction=current(),
        status=status,
        exchanges=exchanges,
        estimated_rtt_ps=float(np.median([estimate_offset_delay(x)[1] for x in exchanges])) if exchanges else math.nan,
    )
