"""Fringe fitting, visibility and CHSH estimation from coincidence counts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import least_squares

from .errors import ConfigurationError, DegenerateError, FitError
from .states import PSI_PLUS_CHSH_ANGLES

BELL_VISIBILITY_THRESHOLD = 1.0 / math.sqrt(2.0)


@dataclass(frozen=True)
class FringeScan:
    """Coincidence counts versus Bob's analyzer angle at a fixed Alice basis."""

    alice_basis_rad: float
    points: tuple[tuple[float, float, float], ...]  # (bob_angle_rad, count, integration_s)

    def __post_init__(self):
        pts = tuple((float(a), float(n), float(t)) for a, n, t in self.points)
        object.__setattr__(self, "points", pts)
        if len(pts) < 6:
            raise ConfigurationError(f"a fringe scan needs >= 6 points, got {len(pts)}")
        angles = np.unique([p[0] for p in pts])
        # Evenly spaced samples over [0, pi) cover a whole fringe period.
        step = float(np.median(np.diff(angles))) if angles.size > 1 else 0.0
        if angles.max() - angles.min() + step < math.pi - 1e-9:
            raise ConfigurationError("fringe scan must cover at least pi of Bob angle")
        if any(p[1] < 0 for p in pts) or any(p[2] <= 0 for p in pts):
            raise ConfigurationError("counts must be >= 0 and integration times > 0")

    @property
    def angles(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def counts(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    @property
    def integration_s(self) -> np.ndarray:
        return np.array([p[2] for p in self.points])


@dataclass(frozen=True)
class FringeFit:
    """Rate model A*sin^2(theta - phi) + B in counts/s."""

    amplitude: float
    baseline: float
    phase: float
    visibility: float
    chi2: float
    converged: bool = True
    alice_basis_rad: float = math.nan
    nfev: int = 0

    def rate(self, theta) -> np.ndarray:
        return self.amplitude * np.sin(np.asarray(theta) - self.phase) ** 2 + self.baseline

    @property
    def violates_bell(self) -> bool:
        return self.visibility > BELL_VISIBILITY_THRESHOLD


def visibility(fit: FringeFit) -> tuple[float, bool]:
    """(V, Bell-violation flag) from the fitted extrema Nmax = A + B and Nmin = B."""
    denom = fit.amplitude + 2.0 * fit.baseline
    if denom <= 0:
        raise DegenerateError("A + 2B = 0: visibility undefined")
    v = fit.amplitude / denom
    return v, v > BELL_VISIBILITY_THRESHOLD


def _wrap_phase(phi: float) -> float:
    return float(phi % math.pi)


def _refine_poisson(theta, n, t, res, xtol, max_iter, max_rounds: int = 50):
    """Reweight with the fitted mean instead of the observed count until the weights settle.

    The fixed point solves the Poisson likelihood equations, removing the
    downward baseline bias that count weights produce at low counts.
    """
    floor = 1e-9 * max(float(n.mean()), 1.0)
    for _ in range(max_rounds):
        a, b, phi = res.x
        sw = 1.0 / np.sqrt(np.maximum(t * (a * np.sin(theta - phi) ** 2 + b), floor))

        def resid(p, sw=sw):
            return (t * (p[0] * np.sin(theta - p[2]) ** 2 + p[1]) - n) * sw

        def jac(p, sw=sw):
            s, c = np.sin(theta - p[2]), np.cos(theta - p[2])
            return np.column_stack((t * s * s * sw, t * sw, -t * p[0] * 2.0 * s * c * sw))

        new = least_squares(
            resid, x0=res.x, jac=jac, bounds=([0.0, 0.0, -np.inf], [np.inf, np.inf, np.inf]),
            method="trf", xtol=xtol, ftol=1e-15, gtol=1e-15, max_nfev=max_iter, x_scale="jac",
        )
        if new.status <= 0:
            return new, False
        step = np.abs(new.x - res.x) / np.maximum(np.abs(res.x), 1e-6)
        res = new
        if float(step.max()) < 1e-10:
            break
    return res, True


def fit_fringe(
    scan: FringeScan, n_starts: int = 16, xtol: float = 1e-10, max_iter: int = 500, refine: bool = True
) -> FringeFit:
    """Poisson-weighted nonlinear least squares of counts against t*(A sin^2(theta - phi) + B).

    A multi-start fit with weights 1/max(count, 1) locates the optimum; with
    ``refine`` the weights are then iterated on the fitted mean (Poisson MLE).
    """
    theta, n, t = scan.angles, scan.counts, scan.integration_s
    if not np.any(n > 0):
        raise DegenerateError("all fringe counts are zero")
    sw = 1.0 / np.sqrt(np.maximum(n, 1.0))
    rates = n / t

    def resid(p):
        a, b, phi = p
        return (t * (a * np.sin(theta - phi) ** 2 + b) - n) * sw

    def jac(p):
        a, b, phi = p
        s = np.sin(theta - phi)
        c = np.cos(theta - phi)
        return np.column_stack((t * s * s * sw, t * sw, -t * a * 2.0 * s * c * sw))

    r_max, r_min = float(rates.max()), float(rates.min())
    a0, b0 = max(r_max - r_min, 1e-12), max(r_min, 0.0)
    candidates = []
    for k in range(n_starts):
        phi0 = k * math.pi / n_starts
        res = least_squares(
            resid, x0=[a0, b0, phi0], jac=jac, bounds=([0.0, 0.0, -np.inf], [np.inf, np.inf, np.inf]),
            method="trf", xtol=xtol, ftol=1e-15, gtol=1e-15, max_nfev=max_iter, x_scale="jac",
        )
        candidates.append((2.0 * res.cost, res.status > 0, res))
    pool = [c for c in candidates if c[1]] or candidates
    cost, ok, res = min(pool, key=lambda c: c[0])
    if ok and refine:
        res, ok = _refine_poisson(theta, n, t, res, xtol, max_iter)
        cost = 2.0 * res.cost
    a, b, phi = (float(v) for v in res.x)
    v = a / (a + 2.0 * b) if a + 2.0 * b > 0 else 0.0
    fit = FringeFit(a, b, _wrap_phase(phi), v, cost, ok, scan.alice_basis_rad, int(res.nfev))
    if not ok:
        raise FitError("fringe fit did not converge from any start", best=fit)
    return fit


@dataclass(frozen=True)
class ChshResult:
    s: float
    sigma: float
    correlations: tuple[float, float, float, float]
    sigma_bootstrap: float | None = None


def _correlation(c: np.ndarray) -> tuple[float, float]:
    """E and its first-order Poisson variance from [[N(x,y), N(x,y')], [N(x',y), N(x',y')]]."""
    npp, npm, nmp, nmm = c[0, 0], c[0, 1], c[1, 0], c[1, 1]
    total = npp + npm + nmp + nmm
    if total <= 0:
        raise DegenerateError("zero denominator in a CHSH correlation")
    plus, minus = npp + nmm, npm + nmp
    e = (plus - minus) / total
    var = ((1.0 - e) ** 2 * plus + (1.0 + e) ** 2 * minus) / total ** 2
    return e, var


def _chsh(counts: np.ndarray) -> tuple[float, float, tuple]:
    es, vs = zip(*(_correlation(counts[k]) for k in range(4)))
    s = es[0] - es[1] + es[2] + es[3]
    return abs(s), math.sqrt(sum(vs)), tuple(es)


def chsh_from_counts(counts, bootstrap: bool = False, n_boot: int = 200, seed: int = 0) -> ChshResult:
    """S and sigma_S from 16 counts shaped (pair, alice port, bob port).

    Pairs are ordered (a,b), (a,b'), (a',b), (a',b'); ports are (x, x_perp).
    """
    c = np.asarray(counts, dtype=float)
    if c.shape != (4, 2, 2):
        c = c.reshape(4, 2, 2) if c.size == 16 else None
        if c is None:
            raise ConfigurationError("CHSH needs exactly 16 counts")
    if np.any(c < 0) or not np.all(np.isfinite(c)):
        raise ConfigurationError("CHSH counts must be finite and >= 0")
    s, sigma, es = _chsh(c)
    sigma_b = None
    if bootstrap:
        rng = np.random.default_rng(seed)
        samples = []
        for _ in range(n_boot):
            try:
                samples.append(_chsh(rng.poisson(c).astype(float))[0])
            except DegenerateError:
                continue
        sigma_b = float(np.std(samples, ddof=1)) if len(samples) > 1 else math.nan
    return ChshResult(s, sigma, es, sigma_b)


def _match_fit(fits: Mapping[float, FringeFit] | Sequence[FringeFit], angle: float) -> FringeFit:
    items = fits.items() if isinstance(fits, Mapping) else ((f.alice_basis_rad, f) for f in fits)
    for basis, fit in items:
        d = (basis - angle) % math.pi
        if min(d, math.pi - d) < 1e-6:
            return fit
    raise ConfigurationError(f"no fringe fit for Alice basis {angle:.6f} rad")


def chsh_from_fringes(
    fits: Mapping[float, FringeFit] | Sequence[FringeFit],
    angles: Sequence[float] = PSI_PLUS_CHSH_ANGLES,
    integration_s: float = 1.0,
    bootstrap: bool = False,
) -> ChshResult:
    """Evaluate the fitted fringes at the CHSH Bob angles and reduce them to S.

    Fits are needed for Alice bases a, a + pi/2, a' and a' + pi/2; counts are
    rates times ``integration_s``.
    """
    a, a2, b, b2 = (float(x) for x in angles)
    half = math.pi / 2
    counts = np.zeros((4, 2, 2))
    for k, (x, y) in enumerate(((a, b), (a, b2), (a2, b), (a2, b2))):
        for i, ax in enumerate((x, x + half)):
            fit = _match_fit(fits, ax)
            if not fit.converged:
                raise FitError(f"fringe fit for Alice basis {ax:.4f} rad is not converged", best=fit)
            for j, by in enumerate((y, y + half)):
                counts[k, i, j] = float(fit.rate(by)) * integration_s
    return chsh_from_counts(counts, bootstrap=bootstrap)


def mean_visibility(fits: Sequence[FringeFit]) -> float:
    return float(np.mean([f.visibility for f in fits]))


@dataclass
class FringeSet:
    """Fits for the four Alice bases of one link, with their CHSH reduction."""

    fits: list[FringeFit]
    chsh: ChshResult
    extra: dict = field(default_factory=dict)

    @property
    def mean_visibility(self) -> float:
        return mean_visibility(self.fits)
