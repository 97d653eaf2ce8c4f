"""Command-line entry point: calibrate, simulate, analyze, reproduce, sync-demo."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .analysis import FringeScan, chsh_from_fringes, fit_fringe
from .calibration import calibrate
from .coincidence import RESULT_COLUMNS, CoincidenceWindow, count_coincidences, find_peak_delay, sweep_windows
from .errors import CalibrationError, ConfigurationError, ParseError, QcoexistError
from .recipes import FIGURES, acquire, dumps_json, reproduce
from .scenario import ScenarioFile, default_calibrated_path, default_template_path, load_scenario_file
from .states import BellTarget
from .sync import run_sync_session
from .synthesis import GroundTruth, synthesize_run
from .tagio import dumps_table, read_tags, write_tags
from .tomography import TomographyData, TomographyRecord, tomography_mle

EXIT_OK, EXIT_CONFIG, EXIT_ANALYSIS = 0, 2, 3


def _common(p: argparse.ArgumentParser, default_scenario: str) -> None:
    p.add_argument("--scenario", type=Path, default=None,
                   help=f"scenario TOML file (default: packaged {default_scenario} file)")
    p.add_argument("--seed", type=int, default=0, help="master random seed")
    p.add_argument("--out-dir", type=Path, default=Path("."), help="directory for output files")


def _load(args, default: str) -> ScenarioFile:
    path = args.scenario or (default_template_path() if default == "template" else default_calibrated_path())
    return load_scenario_file(path)


def _write(out_dir: Path, name: str, text: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(text)
    return path


# ---------------------------------------------------------------- subcommands


def cmd_calibrate(args) -> int:
    template = _load(args, "template")
    try:
        sf, report = calibrate(template)
    except CalibrationError as exc:
        _write(args.out_dir, "calibration_report.json", dumps_json({"ok": False, "error": str(exc),
                                                                      "residuals": exc.residuals}))
        raise
    out = args.output or args.out_dir / "calibrated.toml"
    out.parent.mkdir(parents=True, exist_ok=True)
    sf.save(out)
    _write(args.out_dir, "calibration_report.json", dumps_json({
        "ok": True, "worst_normalized_residual": report.worst_normalized_residual,
        "residuals": report.residuals, "parameters": report.parameters,
    }))
    print(f"calibrated scenario written to {out} (worst normalized residual {report.worst_normalized_residual:.3f})")
    return EXIT_OK


def _truth_dict(t: GroundTruth) -> dict:
    return {
        "seed": list(t.seed) if isinstance(t.seed, tuple) else t.seed,
        "duration_ps": t.duration_ps,
        "true_pairs": t.true_pairs,
        "differential_delay_ps": t.differential_delay_ps,
        "peak_sigma_ps": t.peak_sigma_ps,
        "categories": t.categories,
        "dropped_negative": t.dropped_negative,
        "dead_time_removed": t.dead_time_removed,
        "clock_trajectory": t.clock_trajectory,
    }


def cmd_simulate(args) -> int:
    sf = _load(args, "calibrated")
    s = sf.scenario(args.profile)
    if args.alice_angle is not None or args.bob_angle is not None:
        s = s.with_analyzers(s.analyzer_a if args.alice_angle is None else args.alice_angle,
                             s.analyzer_b if args.bob_angle is None else args.bob_angle)
    if args.raw:
        a, b, truth = synthesize_run(s, args.duration, args.seed)
        session = None
    else:
        a, b, truth, session = acquire(s, args.duration, args.seed)
    ext = ".bin" if args.format == "bin" else ".csv"
    args.out_dir.mkdir(parents=True, exist_ok=True)
    pa = write_tags(a, args.out_dir / f"alice{ext}")
    pb = write_tags(b, args.out_dir / f"bob{ext}")
    info = _truth_dict(truth)
    info["profile"] = args.profile
    info["bob_sync_corrected"] = session is not None
    _write(args.out_dir, "ground_truth.json", dumps_json(info))
    print(f"wrote {len(a)} tags to {pa} and {len(b)} tags to {pb}")
    return EXIT_OK


def _read_rows(path: Path) -> list[dict]:
    try:
        with path.open(newline="") as fh:
            rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    except OSError as exc:
        raise ConfigurationError(str(exc)) from None
    return rows


def _num(row: dict, key: str, path: Path, lineno: int) -> float:
    try:
        return float(row[key])
    except (KeyError, TypeError, ValueError):
        raise ParseError(f"{path}:{lineno}: missing or non-numeric column {key!r}") from None


def _analyze_fringes(args) -> dict:
    scans: dict[float, list] = {}
    for path in args.inputs:
        for i, row in enumerate(_read_rows(path), start=2):
            basis = _num(row, "alice_basis_rad", path, i)
            scans.setdefault(basis, []).append((_num(row, "bob_angle_rad", path, i),
                                                _num(row, "coincidences", path, i),
                                                _num(row, "integration_s", path, i)))
    fits = [fit_fringe(FringeScan(basis, tuple(pts))) for basis, pts in sorted(scans.items())]
    out = {"fits": [{"alice_basis_rad": f.alice_basis_rad, "amplitude_cps": f.amplitude, "baseline_cps": f.baseline,
                     "phase_rad": f.phase, "visibility": f.visibility, "violates_bell": f.violates_bell,
                     "chi2": f.chi2} for f in fits]}
    if len(fits) >= 4:
        res = chsh_from_fringes(fits)
        out["chsh"] = {"s": res.s, "sigma": res.sigma, "correlations": list(res.correlations)}
    return out


def _analyze_tomography(args) -> dict:
    recs = []
    for path in args.inputs:
        for i, row in enumerate(_read_rows(path), start=2):
            if "alice" not in row or "bob" not in row:
                raise ParseError(f"{path}:{i}: tomography rows need 'alice' and 'bob' columns")
            recs.append(TomographyRecord(row["alice"], row["bob"], _num(row, "coincidences", path, i),
                                         _num(row, "integration_s", path, i)))
    res = tomography_mle(TomographyData(tuple(recs)), BellTarget(args.target))
    return {"fidelity": res.fidelity_to_target, "converged": res.converged, "status": res.status,
            "iterations": res.iterations_used, "log_likelihood": res.log_likelihood,
            "rho_row_major": [[float(z.real), float(z.imag)] for z in res.rho.rho.reshape(-1)]}


def _analyze_tags(args) -> tuple[dict, str | None]:
    if len(args.inputs) != 2:
        raise ConfigurationError("coincidence analysis needs two tag files (Alice, Bob)")
    a = read_tags(args.inputs[0], "alice", allow_unsorted=args.sort)
    b = read_tags(args.inputs[1], "bob", allow_unsorted=args.sort)
    delay = args.delay_ps
    if args.find_delay:
        delay = find_peak_delay(a, b, args.search_range_ps, args.bin_ps)
    windows = args.windows_ps or [args.window_ps]
    results = sweep_windows(a, b, windows, delay) if len(windows) > 1 else \
        [count_coincidences(a, b, CoincidenceWindow(windows[0], delay))]
    table = dumps_table(RESULT_COLUMNS + ("car_defined",), [r.row() + (r.car_defined,) for r in results])
    summary = {"delay_ps": delay, "results": [dict(zip(RESULT_COLUMNS + ("car_defined",), r.row() + (r.car_defined,)))
                                              for r in results]}
    return summary, table


def cmd_analyze(args) -> int:
    table = None
    if args.kind == "fringe":
        summary = _analyze_fringes(args)
    elif args.kind == "tomography":
        summary = _analyze_tomography(args)
    else:
        summary, table = _analyze_tags(args)
    text = dumps_json(summary)
    _write(args.out_dir, f"analysis_{args.kind}.json", text)
    if table is not None:
        _write(args.out_dir, "coincidences.csv", table)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_reproduce(args) -> int:
    sf = _load(args, "calibrated")
    figures = FIGURES if args.figure == "all" else (args.figure,)
    for fig in figures:
        out_dir = args.out_dir / fig if args.figure == "all" else args.out_dir
        out = reproduce(fig, sf, seed=args.seed, out_dir=out_dir, workers=args.workers,
                        require_calibrated=not args.allow_uncalibrated)
        print(f"{fig}: wrote {len(out.files) + 1} files to {out_dir}")
    return EXIT_OK


def cmd_sync_demo(args) -> int:
    sf = _load(args, "calibrated")
    s = sf.scenario(args.profile or sf.recipes.get("sync_demo_profile"))
    session = run_sync_session(s, args.duration, seed=args.seed, outage_at_s=args.outage_at)
    rows = list(zip(session.times_s.tolist(), session.residual_ps.tolist()))
    _write(args.out_dir, "sync_residual.csv", dumps_table(("time_s", "residual_ps"), rows))
    summary = {"status": session.status, "mean_ps": session.residual_mean_ps(), "std_ps": session.residual_std_ps(),
               "max_abs_ps": session.residual_max_abs_ps(), "target_ps": s.sync.residual_target_ps}
    _write(args.out_dir, "sync_summary.json", dumps_json(summary))
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qcoexist", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="fit a scenario template to its anchors")
    _common(p, "template")
    p.add_argument("--output", type=Path, default=None, help="calibrated TOML path (default OUT_DIR/calibrated.toml)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("simulate", help="synthesize tag files for one profile")
    _common(p, "calibrated")
    p.add_argument("--profile", default=None)
    p.add_argument("--duration", type=float, default=1.0, help="acquisition time in seconds")
    p.add_argument("--alice-angle", type=float, default=None, help="Alice analyzer angle (rad)")
    p.add_argument("--bob-angle", type=float, default=None, help="Bob analyzer angle (rad)")
    p.add_argument("--format", choices=("csv", "bin"), default="csv")
    p.add_argument("--raw", action="store_true", help="keep Bob's tags on his free-running clock")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="analyze tag files, fringe scans or tomography counts")
    _common(p, "calibrated")
    p.add_argument("inputs", nargs="+", type=Path)
    p.add_argument("--kind", choices=("coincidence", "fringe", "tomography"), default="coincidence")
    p.add_argument("--window-ps", type=float, default=2000.0)
    p.add_argument("--windows-ps", type=float, nargs="+", default=None, help="sweep several window widths")
    p.add_argument("--delay-ps", type=float, default=0.0)
    p.add_argument("--find-delay", action="store_true", help="locate the coincidence peak first")
    p.add_argument("--search-range-ps", type=float, default=20000.0)
    p.add_argument("--bin-ps", type=float, default=50.0)
    p.add_argument("--sort", action="store_true", help="accept and sort unsorted tag files")
    p.add_argument("--target", default="psi_plus", help="Bell state for tomography fidelity")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("reproduce", help="regenerate a figure or table as data files")
    _common(p, "calibrated")
    p.add_argument("figure", choices=FIGURES + ("all",))
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--allow-uncalibrated", action="store_true")
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("sync-demo", help="run the time-transfer servo and write its residual")
    _common(p, "calibrated")
    p.add_argument("--profile", default=None)
    p.add_argument("--duration", type=float, default=200.0)
    p.add_argument("--outage-at", type=float, default=None, help="cut the classical link at this time (s)")
    p.set_defaults(func=cmd_sync_demo)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, CalibrationError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except QcoexistError as exc:
        print(f"analysis failure: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
