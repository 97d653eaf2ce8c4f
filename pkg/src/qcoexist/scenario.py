"""Scenario configuration: all physical parameters of one link, loaded from TOML."""

from __future__ import annotations

import copy
import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .channel import (
    BandAttenuation,
    ClassicalLinkSpec,
    FiberSpec,
    RamanNoiseModel,
    attenuation_db,
    raman_noise_rate,
)
from .errors import ConfigurationError
from .states import AnalyzerSetting, BellTarget, TwoQubitState, werner_mix

TOPOLOGIES = ("entanglement_distribution", "noise_characterization")
SPEED_OF_LIGHT_M_PER_S = 299_792_458.0


def _check_finite(name: str, *values: float) -> None:
    if not all(math.isfinite(v) for v in values):
        raise ConfigurationError(f"{name}: values must be finite")


@dataclass(frozen=True)
class DetectorSpec:
    efficiency: float = 0.85
    dark_rate_cps: float = 500.0
    jitter_sigma_ps: float = 50.0
    dead_time_ps: float = 50_000.0
    latency_ps: float = 0.0

    def __post_init__(self):
        _check_finite("detector", self.efficiency, self.dark_rate_cps, self.jitter_sigma_ps,
                      self.dead_time_ps, self.latency_ps)
        if not 0.0 <= self.efficiency <= 1.0:
            raise ConfigurationError("detector efficiency must lie in [0, 1]")
        if min(self.dark_rate_cps, self.jitter_sigma_ps, self.dead_time_ps, self.latency_ps) < 0:
            raise ConfigurationError("detector rates and times must be >= 0")


@dataclass(frozen=True, eq=False)
class SourceSpec:
    """Poissonian pair source; the state is a Werner mix unless given explicitly."""

    pair_rate_cps: float = 1.0e7
    coupling_efficiency: float = 0.5
    target: BellTarget = BellTarget()
    visibility: float = 1.0
    state: TwoQubitState | None = None

    def __post_init__(self):
        _check_finite("source", self.pair_rate_cps, self.coupling_efficiency, self.visibility)
        if self.pair_rate_cps < 0:
            raise ConfigurationError("pair rate must be >= 0")
        if not 0.0 <= self.coupling_efficiency <= 1.0:
            raise ConfigurationError("coupling efficiency must lie in [0, 1]")
        if self.state is None:
            object.__setattr__(self, "state", werner_mix(self.target, self.visibility))
        elif not self.state.is_physical():
            raise ConfigurationError("source state is not a physical density matrix")

    def __eq__(self, other):
        if not isinstance(other, SourceSpec):
            return NotImplemented
        return (
            self.pair_rate_cps == other.pair_rate_cps
            and self.coupling_efficiency == other.coupling_efficiency
            and self.target == other.target
            and self.visibility == other.visibility
            and np.array_equal(self.state.rho, other.state.rho)
        )


@dataclass(frozen=True)
class ClockSpec:
    initial_offset_ps: float = 0.0
    drift_ppm: float = 0.0
    random_walk_ps_per_sqrt_s: float = 0.0

    def __post_init__(self):
        _check_finite("clock", self.initial_offset_ps, self.drift_ppm, self.random_walk_ps_per_sqrt_s)
        if self.random_walk_ps_per_sqrt_s < 0:
            raise ConfigurationError("random-walk coefficient must be >= 0")


@dataclass(frozen=True)
class SyncSpec:
    """Two-way time-transfer and servo settings."""

    exchange_interval_s: float = 1.0
    timestamp_jitter_ps: float = 10.0
    proportional_gain: float = 0.5
    integral_gain: float = 0.1
    asymmetry_ps_per_km: float = 0.3
    asymmetry_correction: float = 1.0
    turnaround_ps: float = 1_000_000.0
    warmup_exchanges: int = 100
    residual_target_ps: float = 10.0

    def __post_init__(self):
        if not self.exchange_interval_s > 0:
            raise ConfigurationError("exchange interval must be > 0")
        if not (self.proportional_gain > 0 and self.integral_gain > 0):
            raise ConfigurationError("servo gains must be > 0")
        if self.timestamp_jitter_ps < 0 or self.turnaround_ps < 0 or self.warmup_exchanges < 0:
            raise ConfigurationError("sync jitter, turnaround and warm-up must be >= 0")


@dataclass(frozen=True)
class LinkScenario:
    source: SourceSpec
    fiber_alice: FiberSpec
    fiber_bob: FiberSpec
    classical: ClassicalLinkSpec
    raman: RamanNoiseModel
    detector_a: DetectorSpec = DetectorSpec()
    detector_b: DetectorSpec = DetectorSpec()
    clock_a: ClockSpec = ClockSpec()
    clock_b: ClockSpec = ClockSpec()
    analyzer_a: AnalyzerSetting = AnalyzerSetting()
    analyzer_b: AnalyzerSetting = AnalyzerSetting()
    topology: str = "entanglement_distribution"
    analyzer_insertion_loss_db: float = 0.0
    classical_excess_loss_db: float = 3.0
    group_index: float = 1.468
    sync: SyncSpec = SyncSpec()
    name: str = ""

    def __post_init__(self):
        if self.topology not in TOPOLOGIES:
            raise ConfigurationError(f"unknown topology {self.topology!r}; expected one of {TOPOLOGIES}")
        if not self.analyzer_insertion_loss_db >= 0 or not self.classical_excess_loss_db >= 0:
            raise ConfigurationError("insertion losses must be >= 0")
        if not self.group_index >= 1.0:
            raise ConfigurationError("group index must be >= 1")

    @property
    def distributed(self) -> bool:
        return self.topology == "entanglement_distribution"

    def photon_fibers(self) -> tuple[FiberSpec, FiberSpec]:
        """Fiber traversed by the photon detected at Alice and at Bob."""
        if self.distributed:
            return self.fiber_alice, self.fiber_bob
        return self.fiber_alice, self.fiber_alice

    @property
    def length_of_flight_km(self) -> float:
        fa, fb = self.photon_fibers()
        return fa.length_km + fb.length_km

    def arm_efficiency(self, node: str) -> float:
        """Probability that a photon reaches and fires the detector, ignoring polarization."""
        fa, fb = self.photon_fibers()
        fiber, det = (fa, self.detector_a) if node == "alice" else (fb, self.detector_b)
        loss_db = attenuation_db(fiber, "C")
        if self.distributed:
            loss_db += self.analyzer_insertion_loss_db
        return self.source.coupling_efficiency * 10.0 ** (-loss_db / 10.0) * det.efficiency

    def raman_rate_cps(self) -> float:
        return raman_noise_rate(self.raman, self.length_of_flight_km, self.classical.tx_wavelength_nm)

    def propagation_delay_ps(self, length_km: float) -> float:
        return length_km * 1e3 * self.group_index / SPEED_OF_LIGHT_M_PER_S * 1e12

    def differential_delay_ps(self) -> float:
        """True delay of Bob's click relative to Alice's for the same pair."""
        fa, fb = self.photon_fibers()
        return (self.propagation_delay_ps(fb.length_km) + self.detector_b.latency_ps
                - self.propagation_delay_ps(fa.length_km) - self.detector_a.latency_ps)

    def peak_sigma_ps(self) -> float:
        """Gaussian width of the Bob-minus-Alice arrival-time difference."""
        fa, fb = self.photon_fibers()
        return math.sqrt(
            self.detector_a.jitter_sigma_ps ** 2 + self.detector_b.jitter_sigma_ps ** 2
            + (fa.dispersion_spread_ps_per_km * fa.length_km) ** 2
            + (fb.dispersion_spread_ps_per_km * fb.length_km) ** 2
        )

    def classical_fiber(self) -> FiberSpec:
        """Fiber path of the time-transfer signal between the two time taggers."""
        length = self.length_of_flight_km if self.distributed else self.fiber_alice.length_km
        att = self.fiber_alice.attenuation
        return FiberSpec(
            length_km=length,
            attenuation=BandAttenuation(att.c_band_db_per_km, att.o_band_db_per_km, self.classical_excess_loss_db),
        )

    def needs_sync(self) -> bool:
        # In the noise-characterization layout both detectors share one time tagger.
        return self.distributed

    def with_analyzers(self, a: float | AnalyzerSetting, b: float | AnalyzerSetting) -> "LinkScenario":
        a = a if isinstance(a, AnalyzerSetting) else AnalyzerSetting(a)
        b = b if isinstance(b, AnalyzerSetting) else AnalyzerSetting(b)
        return replace(self, analyzer_a=a, analyzer_b=b)


# ---------------------------------------------------------------- TOML mapping


def _fiber_to_dict(f: FiberSpec) -> dict:
    return {
        "length_km": f.length_km,
        "c_band_db_per_km": f.attenuation.c_band_db_per_km,
        "o_band_db_per_km": f.attenuation.o_band_db_per_km,
        "excess_loss_db": f.attenuation.excess_loss_db,
        "dispersion_spread_ps_per_km": f.dispersion_spread_ps_per_km,
    }


def _fiber_from_dict(d: Mapping[str, Any]) -> FiberSpec:
    d = dict(d)
    att = BandAttenuation(
        c_band_db_per_km=float(d.pop("c_band_db_per_km", 0.20)),
        o_band_db_per_km=float(d.pop("o_band_db_per_km", 0.33)),
        excess_loss_db=float(d.pop("excess_loss_db", 3.0)),
    )
    return FiberSpec(attenuation=att, **{k: float(v) for k, v in d.items()})


def scenario_to_dict(s: LinkScenario) -> dict:
    src = s.source
    return {
        "name": s.name,
        "topology": s.topology,
        "analyzer_insertion_loss_db": s.analyzer_insertion_loss_db,
        "classical_excess_loss_db": s.classical_excess_loss_db,
        "group_index": s.group_index,
        "source": {
            "pair_rate_cps": src.pair_rate_cps,
            "coupling_efficiency": src.coupling_efficiency,
            "bell_state": src.target.which,
            "phase_rad": src.target.phase_rad,
            "visibility": src.visibility,
        },
        "fiber_alice": _fiber_to_dict(s.fiber_alice),
        "fiber_bob": _fiber_to_dict(s.fiber_bob),
        "classical": asdict(s.classical),
        "raman": asdict(s.raman),
        "detectors": {"alice": asdict(s.detector_a), "bob": asdict(s.detector_b)},
        "clocks": {"alice": asdict(s.clock_a), "bob": asdict(s.clock_b)},
        "analyzers": {"alice": asdict(s.analyzer_a), "bob": asdict(s.analyzer_b)},
        "sync": asdict(s.sync),
    }


def scenario_from_dict(d: Mapping[str, Any]) -> LinkScenario:
    try:
        src = dict(d["source"])
        target = BellTarget(src.pop("bell_state", "psi_plus"), float(src.pop("phase_rad", 0.0)))
        source = SourceSpec(target=target, **{k: float(v) for k, v in src.items()})
        dets = d.get("detectors", {})
        clocks = d.get("clocks", {})
        ans = d.get("analyzers", {})
        sync = dict(d.get("sync", {}))
        if "warmup_exchanges" in sync:
            sync["warmup_exchanges"] = int(sync["warmup_exchanges"])
        return LinkScenario(
            name=str(d.get("name", "")),
            topology=str(d.get("topology", "entanglement_distribution")),
            analyzer_insertion_loss_db=float(d.get("analyzer_insertion_loss_db", 0.0)),
            classical_excess_loss_db=float(d.get("classical_excess_loss_db", 3.0)),
            group_index=float(d.get("group_index", 1.468)),
            source=source,
            fiber_alice=_fiber_from_dict(d["fiber_alice"]),
            fiber_bob=_fiber_from_dict(d.get("fiber_bob", d["fiber_alice"])),
            classical=ClassicalLinkSpec(**d.get("classical", {})),
            raman=RamanNoiseModel(**d["raman"]),
            detector_a=DetectorSpec(**dets.get("alice", {})),
            detector_b=DetectorSpec(**dets.get("bob", {})),
            clock_a=ClockSpec(**clocks.get("alice", {})),
            clock_b=ClockSpec(**clocks.get("bob", {})),
            analyzer_a=AnalyzerSetting(**ans.get("alice", {})),
            analyzer_b=AnalyzerSetting(**ans.get("bob", {})),
            sync=SyncSpec(**sync),
        )
    except KeyError as exc:
        raise ConfigurationError(f"scenario is missing section or key {exc}") from exc
    except TypeError as exc:
        raise ConfigurationError(f"scenario has an unknown or malformed field: {exc}") from exc


def _deep_merge(base: dict, override: Mapping[str, Any]) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ScenarioFile:
    """A base scenario with named profiles (partial overrides), anchors and recipe settings."""

    base: dict
    profiles: dict[str, dict] = field(default_factory=dict)
    anchors: dict = field(default_factory=dict)
    recipes: dict = field(default_factory=dict)
    calibration: dict = field(default_factory=dict)

    def profile_dict(self, name: str) -> dict:
        if name not in self.profiles:
            raise ConfigurationError(f"unknown profile {name!r}; available: {sorted(self.profiles)}")
        merged = _deep_merge(self.base, self.profiles[name])
        merged["name"] = name
        return merged

    def scenario(self, name: str | None = None) -> LinkScenario:
        if name is None:
            return scenario_from_dict(self.base)
        return scenario_from_dict(self.profile_dict(name))

    @property
    def is_calibrated(self) -> bool:
        return bool(self.calibration.get("calibrated", False))

    def to_dict(self) -> dict:
        out = {"scenario": self.base, "profiles": self.profiles}
        if self.anchors:
            out["anchors"] = self.anchors
        if self.recipes:
            out["recipes"] = self.recipes
        if self.calibration:
            out["calibration"] = self.calibration
        return out

    def dumps(self) -> str:
        return tomli_w.dumps(_plain(self.to_dict()))

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.dumps())
        return path

    def digest(self) -> str:
        return canonical_digest(self.to_dict())


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def loads_scenario_file(text: str) -> ScenarioFile:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"scenario file is not valid TOML: {exc}") from exc
    if "scenario" not in raw:
        raise ConfigurationError("scenario file needs a [scenario] table")
    sf = ScenarioFile(
        base=raw["scenario"],
        profiles=raw.get("profiles", {}),
        anchors=raw.get("anchors", {}),
        recipes=raw.get("recipes", {}),
        calibration=raw.get("calibration", {}),
    )
    # Fail early on malformed base or profile content.
    sf.scenario()
    for name in sf.profiles:
        sf.scenario(name)
    return sf


def load_scenario_file(path: str | Path) -> ScenarioFile:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"scenario file not found: {path}")
    return loads_scenario_file(path.read_text())


def default_template_path() -> Path:
    return Path(__file__).with_name("data") / "template.toml"


def default_calibrated_path() -> Path:
    return Path(__file__).with_name("data") / "calibrated.toml"


def canonical_digest(obj: Any) -> str:
    """SHA-256 of a key-sorted JSON rendering, so field order never matters."""
    text = json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"), allow_nan=True)
    return hashlib.sha256(text.encode()).hexdigest()


def scenario_digest(s: LinkScenario) -> str:
    return canonical_digest(scenario_to_dict(s))
