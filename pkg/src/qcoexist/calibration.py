"""Fit scenario parameters to measured link anchors.

Raman parameters come from the noise anchors directly. The remaining free
parameters (pair rate, source visibility, quantum-path excess loss per profile)
are chosen to minimize the worst normalized anchor residual, where each residual
is scaled so that +/-1 is the edge of that anchor's tolerance band.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .analysis import chsh_from_counts
from .channel import calibrate_raman, raman_noise_rate
from .coincidence import sweep_lengths
from .errors import CalibrationError, ConfigurationError
from .scenario import LinkScenario, ScenarioFile
from .states import PSI_PLUS_CHSH_ANGLES, AnalyzerSetting, fringe_coefficients
from .synthesis import expected_link_metrics

EXCESS_BOUNDS = (0.0, 30.0)
VISIBILITY_BOUNDS = (0.5, 1.0)
LOG_RATE_BOUNDS = (math.log(1e4), math.log(1e10))


@dataclass
class CalibrationReport:
    worst_normalized_residual: float
    residuals: dict[str, dict] = field(default_factory=dict)
    parameters: dict[str, float] = field(default_factory=dict)

    @property
    def within_tolerance(self) -> bool:
        return self.worst_normalized_residual <= 1.0


def peak_rate(s: LinkScenario, window_ps: float) -> float:
    """Maximum rate for the Alice-H basis, solved from the exact fringe coefficients."""
    a = AnalyzerSetting(0.0)
    c0, c1, c2 = fringe_coefficients(s.source.state, a)
    theta = 0.5 * math.atan2(c2, c1)
    return expected_link_metrics(s.with_analyzers(a, AnalyzerSetting(theta)), window_ps).coincidence_cps


def predicted_visibilities(s: LinkScenario, bases, window_ps: float) -> list[float]:
    return [expected_link_metrics(s.with_analyzers(b, s.analyzer_b), window_ps).visibility for b in bases]


def predicted_chsh(s: LinkScenario, angles, window_ps: float, integration_s: float):
    """Expected S and its counting uncertainty for one integration per setting."""
    a, a2, b, b2 = angles
    half = math.pi / 2
    counts = np.zeros((4, 2, 2))
    for k, (x, y) in enumerate(((a, b), (a, b2), (a2, b), (a2, b2))):
        for i, ax in enumerate((x, x + half)):
            for j, by in enumerate((y, y + half)):
                m = expected_link_metrics(s.with_analyzers(ax, by), window_ps)
                counts[k, i, j] = m.coincidence_cps * integration_s
    return chsh_from_counts(counts)


@dataclass
class _Anchors:
    window_ps: float
    noise: list
    rates: dict
    visibility: dict
    chsh: dict
    car: dict
    tied: dict
    rate_factor: float
    vis_abs: float
    chsh_sigmas: float


def _parse_anchors(raw: dict) -> _Anchors:
    tol = raw.get("tolerance", {})
    return _Anchors(
        window_ps=float(raw.get("coincidence_window_ps", 2000.0)),
        noise=[tuple(p) for p in raw.get("noise", [])],
        rates={k: float(v) for k, v in raw.get("rates", {}).items()},
        visibility={k: float(np.mean(v)) for k, v in raw.get("visibility", {}).items()},
        chsh={k: (float(v[0]), float(v[1])) for k, v in raw.get("chsh", {}).items()},
        car=dict(raw.get("car", {})),
        tied=dict(raw.get("tied_excess", {})),
        rate_factor=float(tol.get("rate_factor", 2.0)),
        vis_abs=float(tol.get("visibility_abs", 0.05)),
        chsh_sigmas=float(tol.get("chsh_sigmas", 3.0)),
    )


def _set_excess(sf: ScenarioFile, profile: str, excess_db: float) -> None:
    prof = sf.profiles.setdefault(profile, {})
    for arm in ("fiber_alice", "fiber_bob"):
        prof.setdefault(arm, {})["excess_loss_db"] = float(excess_db)


class _Model:
    """Anchor residuals as a function of the free parameter vector."""

    def __init__(self, sf: ScenarioFile, anchors: _Anchors):
        self.sf = sf
        self.anch = anchors
        self.profiles = sorted(set(anchors.rates) | set(anchors.visibility) | set(anchors.chsh))
        self.car_profile = anchors.car.get("profile")
        for p in self.profiles + ([self.car_profile] if self.car_profile else []):
            if p not in sf.profiles:
                raise ConfigurationError(f"anchor refers to unknown profile {p!r}")
        self.base = {p: sf.scenario(p) for p in self.profiles}
        if self.car_profile:
            self.base[self.car_profile] = sf.scenario(self.car_profile)
        self.fit_visibility = bool(anchors.visibility or anchors.chsh)
        rec = sf.recipes
        self.bases = rec.get("alice_bases_rad", [-math.pi / 4, 0.0, math.pi / 4, math.pi / 2])
        self.angles = rec.get("chsh_angles_rad", list(PSI_PLUS_CHSH_ANGLES))
        self.integration_s = float(rec.get("fringe_integration_s", 1.0))

    def unpack(self, x: np.ndarray) -> dict:
        out = {"pair_rate_cps": math.exp(x[0])}
        i = 1
        if self.fit_visibility:
            out["visibility"] = float(x[1])
            i = 2
        for p in self.profiles:
            out[f"excess_db.{p}"] = float(x[i])
            i += 1
        return out

    def scenario(self, p: str, params: dict) -> LinkScenario:
        s = self.base[p]
        src = replace(s.source, pair_rate_cps=params["pair_rate_cps"],
                      visibility=params.get("visibility", s.source.visibility), state=None)
        ex_profile = self.anch.tied.get(p, p)
        ex = params.get(f"excess_db.{ex_profile}")
        if ex is None:
            return replace(s, source=src)
        fa = replace(s.fiber_alice, attenuation=replace(s.fiber_alice.attenuation, excess_loss_db=ex))
        fb = replace(s.fiber_bob, attenuation=replace(s.fiber_bob.attenuation, excess_loss_db=ex))
        return replace(s, source=src, fiber_alice=fa, fiber_bob=fb)

    def residuals(self, x: np.ndarray) -> dict[str, dict]:
        params = self.unpack(x)
        a = self.anch
        out: dict[str, dict] = {}
        for p in self.profiles:
            s = self.scenario(p, params)
            if p in a.rates:
                pred = peak_rate(s, a.window_ps)
                out[f"rate.{p}"] = {
                    "target": a.rates[p], "predicted": pred,
                    "normalized": math.log(max(pred, 1e-300) / a.rates[p]) / math.log(a.rate_factor),
                }
            if p in a.visibility:
                pred = float(np.mean(predicted_visibilities(s, self.bases, a.window_ps)))
                out[f"visibility.{p}"] = {
                    "target": a.visibility[p], "predicted": pred,
                    "normalized": (pred - a.visibility[p]) / a.vis_abs,
                }
            if p in a.chsh:
                res = predicted_chsh(s, self.angles, a.window_ps, self.integration_s)
                out[f"chsh.{p}"] = {
                    "target": a.chsh[p][0], "predicted": res.s, "sigma": res.sigma,
                    "normalized": (res.s - a.chsh[p][0]) / (a.chsh_sigmas * res.sigma),
                }
        if self.car_profile:
            c = a.car
            lo, hi = float(c["min"]), float(c["max"])
            s = self.scenario(self.car_profile, params)
            car = sweep_lengths(s, [float(c["length_of_flight_km"])], a.window_ps)[0].car
            centre, half = math.log(math.sqrt(lo * hi)), math.log(math.sqrt(hi / lo))
            out[f"car.{self.car_profile}"] = {
                "target": [lo, hi], "predicted": car,
                "normalized": (math.log(max(car, 1e-300)) - centre) / half,
            }
        return out

    def vector(self, x: np.ndarray) -> np.ndarray:
        return np.array([r["normalized"] for r in self.residuals(x).values()])

    def bounds(self) -> list[tuple[float, float]]:
        b = [LOG_RATE_BOUNDS]
        if self.fit_visibility:
            b.append(VISIBILITY_BOUNDS)
        b += [EXCESS_BOUNDS] * len(self.profiles)
        return b

    def starts(self) -> list[np.ndarray]:
        """Deterministic starting points: the template values and a coarse pair-rate ladder."""
        base = next(iter(self.base.values()))
        ex0 = [self.base[p].fiber_alice.attenuation.excess_loss_db for p in self.profiles]
        vis = [min(max(base.source.visibility, 0.5), 1.0)] if self.fit_visibility else []
        out = []
        for scale in (1.0, 0.3, 3.0):
            x = [math.log(base.source.pair_rate_cps * scale)] + vis + list(ex0)
            out.append(np.array(x, dtype=float))
        return out


def _minimax(model: _Model) -> tuple[np.ndarray, float]:
    """min t subject to |r_i(x)| <= t, solved with SLSQP from several starts."""
    bounds = model.bounds() + [(0.0, None)]

    def cons(z):
        r = model.vector(z[:-1])
        return np.concatenate((z[-1] - r, z[-1] + r))

    best = None
    for x0 in model.starts():
        # Per-profile excess first: make each rate anchor exact, then trade off.
        x0 = _seed_excess(model, x0)
        z0 = np.concatenate((x0, [float(np.max(np.abs(model.vector(x0))))]))
        res = minimize(lambda z: z[-1], z0, method="SLSQP", bounds=bounds,
                       constraints=[{"type": "ineq", "fun": cons}],
                       options={"maxiter": 300, "ftol": 1e-10})
        x = np.clip(res.x[:-1], [b[0] for b in bounds[:-1]], [b[1] for b in bounds[:-1]])
        worst = float(np.max(np.abs(model.vector(x))))
        if best is None or worst < best[1] - 1e-12:
            best = (x, worst)
    return best


def _seed_excess(model: _Model, x: np.ndarray) -> np.ndarray:
    """Solve each profile's excess loss so its rate anchor is met exactly (if any)."""
    x = x.copy()
    offset = 2 if model.fit_visibility else 1
    for i, p in enumerate(model.profiles):
        if p not in model.anch.rates:
            continue
        lo, hi = EXCESS_BOUNDS
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            x[offset + i] = mid
            pred = peak_rate(model.scenario(p, model.unpack(x)), model.anch.window_ps)
            lo, hi = (mid, hi) if pred > model.anch.rates[p] else (lo, mid)
        x[offset + i] = 0.5 * (lo + hi)
    return x


def _check_rates_monotone(sf: ScenarioFile, rates: dict) -> None:
    pts = sorted((sf.scenario(p).length_of_flight_km, r, p) for p, r in rates.items())
    for (l1, r1, p1), (l2, r2, p2) in zip(pts, pts[1:]):
        if r2 > r1 and l2 > l1:
            raise CalibrationError(
                f"contradictory anchors: rate rises from {r1:g} cps ({p1}, {l1:g} km) "
                f"to {r2:g} cps ({p2}, {l2:g} km) with longer fiber",
                {"rates": rates},
            )


def calibrate(template: ScenarioFile, anchors: dict | None = None) -> tuple[ScenarioFile, CalibrationReport]:
    """Return a calibrated copy of ``template`` and the residual report."""
    raw = template.anchors if anchors is None else anchors
    if not raw:
        raise CalibrationError("no anchors given")
    anch = _parse_anchors(raw)
    sf = ScenarioFile(copy.deepcopy(template.base), copy.deepcopy(template.profiles),
                      copy.deepcopy(raw), copy.deepcopy(template.recipes), {})
    params: dict[str, float] = {}
    residuals: dict[str, dict] = {}
    if anch.noise:
        scale = float(sf.base.get("raman", {}).get("relative_scale_1310", 10.0))
        model = calibrate_raman(anch.noise, relative_scale_1310=scale)
        sf.base["raman"] = {"amplitude_cps": model.amplitude_cps, "growth_per_km": model.growth_per_km,
                            "relative_scale_1310": model.relative_scale_1310}
        params["raman.amplitude_cps"] = model.amplitude_cps
        params["raman.growth_per_km"] = model.growth_per_km
        for lof, rate in anch.noise:
            pred = raman_noise_rate(model, lof, 0.0)
            residuals[f"noise.{lof:g}km"] = {"target": rate, "predicted": pred,
                                             "normalized": (pred / rate - 1.0) / 0.05}
    worst = max((abs(r["normalized"]) for r in residuals.values()), default=0.0)
    if anch.rates or anch.visibility or anch.chsh or anch.car:
        if anch.rates:
            _check_rates_monotone(sf, anch.rates)
        model = _Model(sf, anch)
        x, _ = _minimax(model)
        fitted = model.unpack(x)
        res = model.residuals(x)
        residuals.update(res)
        params.update(fitted)
        sf.base["source"]["pair_rate_cps"] = fitted["pair_rate_cps"]
        if "visibility" in fitted:
            sf.base["source"]["visibility"] = fitted["visibility"]
        for p in model.profiles:
            _set_excess(sf, p, fitted[f"excess_db.{p}"])
        for p, src in anch.tied.items():
            if f"excess_db.{src}" in fitted and p in sf.profiles:
                _set_excess(sf, p, fitted[f"excess_db.{src}"])
        worst = max([worst] + [abs(r["normalized"]) for r in res.values()])
    report = CalibrationReport(worst, residuals, params)
    if not report.within_tolerance:
        raise CalibrationError(
            f"no parameter set places every anchor inside its tolerance (worst normalized residual {worst:.3f})",
            residuals,
        )
    sf.calibration = {"calibrated": True, "worst_normalized_residual": worst, "parameters": params}
    return sf, report
