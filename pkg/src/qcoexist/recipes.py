"""End-to-end reproduction recipes: synthesize, synchronize, count, analyze, write data files."""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .analysis import FringeScan, chsh_from_fringes, fit_fringe
from .channel import classical_link_margin, link_is_up
from .coincidence import RESULT_COLUMNS, CoincidenceWindow, count_coincidences, find_peak_delay, sweep_lengths, sweep_windows
from .errors import ConfigurationError, LinkDownError
from .scenario import LinkScenario, ScenarioFile
from .states import TOMOGRAPHY_SETTINGS, AnalyzerSetting, BellTarget, fringe_coefficients
from .synthesis import Seed, point_seed, synthesize_run
from .sync import run_sync_session
from .tagio import dumps_table, fmt
from .tomography import CANONICAL_ORDER, TomographyData, TomographyRecord, tomography_mle

FIGURES = ("fringes_fig4", "car_vs_length_fig6", "window_sweep_fig7", "table1", "table2", "tomography_fig5", "sync_demo")

# Sub-stream labels so different studies never share random numbers.
_STUDY_FRINGES, _STUDY_TOMO, _STUDY_WINDOW, _STUDY_SYNC = 1, 2, 3, 4
_DELAY_POINT = 1_000_000


@dataclass
class RecipeOutput:
    figure: str
    files: dict[str, str]
    summary: dict
    manifest: dict = field(default_factory=dict)


# ---------------------------------------------------------------- acquisition


def acquire(scenario: LinkScenario, duration_s: float, seed: Seed):
    """Synthesize one run and put Bob's tags on Alice's timebase when the link needs it."""
    a, b, truth = synthesize_run(scenario, duration_s, seed)
    session = None
    if scenario.needs_sync():
        try:
            session = run_sync_session(scenario, duration_s, seed=seed)
        except LinkDownError as exc:
            raise LinkDownError(
                f"{exc}. The classical transceiver pair cannot close this link (launch power minus "
                f"fiber loss is below receiver sensitivity), so no sync-dependent result can be produced."
            ) from None
        b = session.correction.apply_stream(b)
    return a, b, truth, session


def _max_correlation_angle(s: LinkScenario, alice: AnalyzerSetting) -> float:
    c0, c1, c2 = fringe_coefficients(s.source.state, alice)
    return 0.5 * math.atan2(c2, c1)


def calibrate_delay(s: LinkScenario, recipes: dict, seed: Seed) -> float:
    """Locate the coincidence peak once per link, at the maximally correlated setting."""
    a0 = AnalyzerSetting(0.0)
    run = s.with_analyzers(a0, AnalyzerSetting(_max_correlation_angle(s, a0)))
    a, b, _, _ = acquire(run, float(recipes.get("delay_calibration_s", 5.0)), seed)
    return find_peak_delay(
        a, b,
        search_range_ps=float(recipes.get("delay_search_range_ps", 20000.0)),
        bin_ps=float(recipes.get("delay_bin_ps", 50.0)),
        half_width_bins=int(recipes.get("delay_half_width_bins", 8)),
    )


def _point(args):
    s, alice, bob, duration_s, seed, window_ps, delay_ps = args
    a, b, _, _ = acquire(s.with_analyzers(alice, bob), duration_s, seed)
    r = count_coincidences(a, b, CoincidenceWindow(window_ps, delay_ps))
    return r.coincidences, r.accidentals


def _run_points(tasks: list, workers: int) -> list:
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_point, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    return [_point(t) for t in tasks]


def _profiles(sf: ScenarioFile, key: str, default: Sequence[str]) -> list[str]:
    names = list(sf.recipes.get(key, default))
    for n in names:
        if n not in sf.profiles:
            raise ConfigurationError(f"recipe {key} names unknown profile {n!r}")
    return names


# ---------------------------------------------------------------- fringe study


def fringe_study(sf: ScenarioFile, seed: Seed, profiles: Sequence[str] | None = None, workers: int = 1) -> dict:
    """Fringe scans for the four Alice bases of each profile, their fits and CHSH reduction."""
    rec = sf.recipes
    profiles = list(profiles) if profiles is not None else _profiles(sf, "table1_profiles", list(sf.profiles))
    bases = [float(x) for x in rec.get("alice_bases_rad", [-math.pi / 4, 0.0, math.pi / 4, math.pi / 2])]
    n_pts = int(rec.get("fringe_points", 32))
    t_int = float(rec.get("fringe_integration_s", 1.0))
    window = float(rec.get("coincidence_window_ps", 2000.0))
    bob_angles = [2.0 * math.pi * k / n_pts for k in range(n_pts)]
    out = {}
    for pi_, name in enumerate(profiles):
        s = sf.scenario(name)
        base_seed = point_seed(point_seed(seed, _STUDY_FRINGES), pi_)
        delay = calibrate_delay(s, rec, point_seed(base_seed, _DELAY_POINT))
        tasks = [
            (s, AnalyzerSetting(a), AnalyzerSetting(th), t_int, point_seed(base_seed, i * n_pts + k), window, delay)
            for i, a in enumerate(bases) for k, th in enumerate(bob_angles)
        ]
        counts = _run_points(tasks, workers)
        fits, rows = [], []
        for i, a in enumerate(bases):
            pts = [(bob_angles[k], counts[i * n_pts + k][0], t_int) for k in range(n_pts)]
            fit = fit_fringe(FringeScan(a, tuple(pts)))
            fits.append(fit)
            for k in range(n_pts):
                n, acc = counts[i * n_pts + k]
                rows.append((a, bob_angles[k], t_int, n, acc, float(fit.rate(bob_angles[k])) * t_int))
        chsh = chsh_from_fringes(fits, rec.get("chsh_angles_rad"), integration_s=t_int)
        out[name] = {
            "scenario": s, "delay_ps": delay, "fits": fits, "rows": rows, "chsh": chsh,
            "mean_visibility": float(np.mean([f.visibility for f in fits])),
        }
    return out


def _fringe_summary(study: dict) -> dict:
    return {
        name: {
            "length_of_flight_km": r["scenario"].length_of_flight_km,
            "delay_ps": r["delay_ps"],
            "visibilities": [f.visibility for f in r["fits"]],
            "alice_bases_rad": [f.alice_basis_rad for f in r["fits"]],
            "mean_visibility": r["mean_visibility"],
            "chsh_s": r["chsh"].s,
            "chsh_sigma": r["chsh"].sigma,
        }
        for name, r in study.items()
    }


def recipe_fringes(sf: ScenarioFile, seed: Seed, workers: int = 1) -> RecipeOutput:
    study = fringe_study(sf, seed, workers=workers)
    data_rows, fit_rows = [], []
    for name, r in study.items():
        data_rows += [(name,) + row for row in r["rows"]]
        fit_rows += [(name, f.alice_basis_rad, f.amplitude, f.baseline, f.phase, f.visibility, f.chi2,
                      f.converged, f.violates_bell) for f in r["fits"]]
    files = {
        "fringes.csv": dumps_table(("profile", "alice_basis_rad", "bob_angle_rad", "integration_s", "coincidences",
                                    "accidentals", "fit_counts"), data_rows),
        "fringe_fits.csv": dumps_table(("profile", "alice_basis_rad", "amplitude_cps", "baseline_cps", "phase_rad",
                                        "visibility", "chi2", "converged", "violates_bell"), fit_rows),
    }
    return RecipeOutput("fringes_fig4", files, {"profiles": _fringe_summary(study)})


def recipe_table1(sf: ScenarioFile, seed: Seed, workers: int = 1) -> RecipeOutput:
    study = fringe_study(sf, seed, workers=workers)
    bases = [f.alice_basis_rad for f in next(iter(study.values()))["fits"]]
    cols = ["profile", "length_of_flight_km"] + [f"visibility_{math.degrees(b):g}deg" for b in bases]
    cols += ["mean_visibility", "chsh_s", "chsh_sigma"]
    rows = [
        [name, r["scenario"].length_of_flight_km] + [f.visibility for f in r["fits"]]
        + [r["mean_visibility"], r["chsh"].s, r["chsh"].sigma]
        for name, r in study.items()
    ]
    return RecipeOutput("table1", {"table1.csv": dumps_table(cols, rows)}, {"profiles": _fringe_summary(study)})


# ---------------------------------------------------------------- noise and windows


def recipe_car_vs_length(sf: ScenarioFile, seed: Seed, workers: int = 1) -> RecipeOutput:
    rec = sf.recipes
    name = rec.get("car_profile", "noise_char_100km")
    s = sf.scenario(name)
    lengths = [float(x) for x in rec.get("car_lengths_km", range(10, 201, 10))]
    window = float(rec.get("coincidence_window_ps", 2000.0))
    pts = sweep_lengths(s, lengths, window)
    rows = [(p.length_of_flight_km, p.window_ps, p.singles_a_cps, p.singles_b_cps, p.true_coincidence_cps,
             p.accidental_cps, p.car) for p in pts]
    cars = [p.car for p in pts]
    above = [p.length_of_flight_km for p in pts if p.car >= 10.0]
    summary = {
        "profile": name,
        "window_ps": window,
        "car": dict(zip([fmt(x) for x in lengths], cars)),
        "monotone_decreasing": bool(all(x > y for x, y in zip(cars, cars[1:]))),
        "max_length_with_car_at_least_10_km": max(above) if above else None,
    }
    files = {"car_vs_length.csv": dumps_table(
        ("length_of_flight_km", "window_ps", "singles_a_cps", "singles_b_cps", "true_coincidence_cps",
         "accidental_cps", "car"), rows)}
    return RecipeOutput("car_vs_length_fig6", files, summary)


def window_sweep(sf: ScenarioFile, seed: Seed):
    """Coincidence and accidental counts versus window width on one long acquisition."""
    rec = sf.recipes
    name = rec.get("window_sweep_profile", "noise_char_100km")
    s = sf.scenario(name)
    duration = float(rec.get("window_sweep_duration_s", 40.0))
    windows = [float(w) for w in rec.get("window_sweep_ps", [100.0, 500.0, 1000.0, 2000.0, 5000.0])]
    a0 = AnalyzerSetting(0.0)
    s = s.with_analyzers(a0, AnalyzerSetting(_max_correlation_angle(s, a0))) if s.distributed else s
    a, b, truth, _ = acquire(s, duration, point_seed(seed, _STUDY_WINDOW))
    delay = find_peak_delay(a, b, float(rec.get("delay_search_range_ps", 20000.0)),
                            float(rec.get("delay_bin_ps", 50.0)),
                            half_width_bins=int(rec.get("delay_half_width_bins", 8)))
    return s, delay, sweep_windows(a, b, windows, delay), truth


def recipe_window_sweep(sf: ScenarioFile, seed: Seed, workers: int = 1) -> RecipeOutput:
    s, delay, results, truth = window_sweep(sf, seed)
    dur = results[0].duration_ps / 1e12
    rows = [r.row() + (r.coincidences / dur, r.accidentals / dur, (r.coincidences - r.accidentals) / dur)
            for r in results]
    cols = RESULT_COLUMNS + ("coincidence_cps", "accidental_cps", "net_coincidence_cps")
    summary = {
        "length_of_flight_km": s.length_of_flight_km,
        "duration_s": dur,
        "delay_ps": delay,
        "true_pairs": truth.true_pairs,
        "windows_ps": [r.window_ps for r in results],
        "coincidences": [r.coincidences for r in results],
        "car": [r.car for r in results],
    }
    return RecipeOutput("window_sweep_fig7", {"window_sweep.csv": dumps_table(cols, rows)}, summary)


# ---------------------------------------------------------------- classical link


def recipe_table2(sf: ScenarioFile, seed: Seed, workers: int = 1) -> RecipeOutput:
    rec = sf.recipes
    s = sf.scenario()
    lengths = [float(x) for x in rec.get("table2_lengths_km", [25.0, 50.0, 100.0])]
    links = rec.get("table2_links", [])
    if not links:
        raise ConfigurationError("recipes.table2_links is empty")
    rows, matrix = [], {}
    for link in links:
        spec = replace(s.classical, **link)
        key = f"{spec.tx_wavelength_nm:g}/{spec.rx_wavelength_nm:g}nm@{spec.receiver_sensitivity_dbm:g}dBm"
        matrix[key] = {}
        for length in lengths:
            fiber = replace(s.classical_fiber(), length_km=length)
            margin = classical_link_margin(spec, fiber)
            up = link_is_up(spec, fiber)
            matrix[key][fmt(length)] = "UP" if up else "DOWN"
            rows.append((spec.tx_wavelength_nm, spec.rx_wavelength_nm, spec.launch_power_dbm,
                         spec.receiver_sensitivity_dbm, length, margin, "UP" if up else "DOWN"))
    cols = ("tx_wavelength_nm", "rx_wavelength_nm", "launch_power_dbm", "receiver_sensitivity_dbm", "length_km",
            "margin_db", "status")
    return RecipeOutput("table2", {"table2.csv": dumps_table(cols, rows)}, {"feasibility": matrix})


# ---------------------------------------------------------------- tomography


def tomography_study(sf: ScenarioFile, seed: Seed, profiles: Sequence[str] | None = None, workers: int = 1) -> dict:
    rec = sf.recipes
    profiles = list(profiles) if profiles is not None else _profiles(sf, "tomography_profiles", list(sf.profiles))
    t_int = float(rec.get("tomography_integration_s", 15.0))
    window = float(rec.get("coincidence_window_ps", 2000.0))
    out = {}
    for pi_, name in enumerate(profiles):
        s = sf.scenario(name)
        base_seed = point_seed(point_seed(seed, _STUDY_TOMO), pi_)
        delay = calibrate_delay(s, rec, point_seed(base_seed, _DELAY_POINT))
        tasks = [
            (s, TOMOGRAPHY_SETTINGS[a], TOMOGRAPHY_SETTINGS[b], t_int, point_seed(base_seed, k), window, delay)
            for k, (a, b) in enumerate(CANONICAL_ORDER)
        ]
        counts = _run_points(tasks, workers)
        data = TomographyData(tuple(
            TomographyRecord(a, b, float(n), t_int) for (a, b), (n, _) in zip(CANONICAL_ORDER, counts)
        ))
        target = BellTarget(s.source.target.which, s.source.target.phase_rad)
        result = tomography_mle(data, target)
        out[name] = {"scenario": s, "delay_ps": delay, "data": data, "accidentals": [c[1] for c in counts],
                     "result": result}
    return out


def recipe_tomography(sf: ScenarioFile, seed: Seed, workers: int = 1) -> RecipeOutput:
    study = tomography_study(sf, seed, workers=workers)
    files, summary = {}, {}
    for name, r in study.items():
        rows = [(x.alice, x.bob, x.integration_s, x.count, acc) for x, acc in zip(r["data"].records, r["accidentals"])]
        files[f"tomography_counts_{name}.csv"] = dumps_table(
            ("alice", "bob", "integration_s", "coincidences", "accidentals"), rows)
        rho = r["result"].rho.rho
        files[f"density_matrix_{name}.json"] = dumps_json({
            "profile": name,
            "rho_row_major": [[float(z.real), float(z.imag)] for z in rho.reshape(-1)],
        })
        res = r["result"]
        summary[name] = {
            "length_of_flight_km": r["scenario"].length_of_flight_km,
            "fidelity": res.fidelity_to_target,
            "total_coincidences": r["data"].total_counts,
            "converged": res.converged,
            "iterations": res.iterations_used,
            "purity": res.rho.purity(),
        }
    return RecipeOutput("tomography_fig5", files, {"profiles": summary})


# ---------------------------------------------------------------- sync


def recipe_sync_demo(sf: ScenarioFile, seed: Seed, workers: int = 1) -> RecipeOutput:
    rec = sf.recipes
    name = rec.get("sync_demo_profile", "spool_100km")
    s = sf.scenario(name)
    duration = float(rec.get("sync_demo_duration_s", 200.0))
    try:
        session = run_sync_session(s, duration, seed=point_seed(seed, _STUDY_SYNC))
    except LinkDownError as exc:
        raise LinkDownError(f"{exc}. The classical transceiver pair cannot close this link.") from None
    rows = [(t, r, ph) for t, r, ph in zip(session.times_s.tolist(), session.residual_ps.tolist(),
                                          session.correction.phase_ps.tolist())]
    summary = {
        "profile": name,
        "status": session.status,
        "steady_state_mean_ps": session.residual_mean_ps(),
        "steady_state_std_ps": session.residual_std_ps(),
        "steady_state_max_abs_ps": session.residual_max_abs_ps(),
        "target_ps": s.sync.residual_target_ps,
        "exchanges": len(session.exchanges),
    }
    files = {"sync_residual.csv": dumps_table(("time_s", "residual_ps", "phase_correction_ps"), rows)}
    return RecipeOutput("sync_demo", files, summary)


RECIPES: dict[str, Callable[..., RecipeOutput]] = {
    "fringes_fig4": recipe_fringes,
    "car_vs_length_fig6": recipe_car_vs_length,
    "window_sweep_fig7": recipe_window_sweep,
    "table1": recipe_table1,
    "table2": recipe_table2,
    "tomography_fig5": recipe_tomography,
    "sync_demo": recipe_sync_demo,
}


# ---------------------------------------------------------------- output


def json_ready(obj):
    if isinstance(obj, dict):
        return {str(k): json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_ready(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps_json(obj) -> str:
    return json.dumps(json_ready(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def reproduce(
    figure: str,
    sf: ScenarioFile,
    seed: int = 0,
    out_dir: str | Path | None = None,
    workers: int = 1,
    require_calibrated: bool = True,
) -> RecipeOutput:
    """Run one recipe and (optionally) write its data files, summary and manifest."""
    if figure not in RECIPES:
        raise ConfigurationError(f"unknown figure {figure!r}; choose from {', '.join(FIGURES)}")
    if require_calibrated and not sf.is_calibrated:
        raise ConfigurationError("reproduce needs a calibrated scenario file (run `qcoexist calibrate`)")
    out = RECIPES[figure](sf, seed, workers=workers)
    out.files["summary.json"] = dumps_json({"figure": figure, "seed": seed, **out.summary})
    out.manifest = {
        "figure": figure,
        "seed": seed,
        "scenario_digest": sf.digest(),
        "toolkit_version": __version__,
        "files": [{"path": k, "sha256": sha256_text(v)} for k, v in sorted(out.files.items())],
    }
    if out_dir is not None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        for name, text in out.files.items():
            (d / name).write_text(text)
        (d / "manifest.json").write_text(dumps_json(out.manifest))
    return out
