"""Two-qubit state tomography from the 16 {H,V,D,R} x {H,V,D,R} coincidence settings."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy.optimize import minimize

from .errors import ConfigurationError, InversionError
from .states import TOL, TOMOGRAPHY_SETTINGS, AnalyzerSetting, BellTarget, TwoQubitState, fidelity

SETTING_LABELS = tuple(TOMOGRAPHY_SETTINGS)
CANONICAL_ORDER = tuple(itertools.product(SETTING_LABELS, SETTING_LABELS))
_PAULI = (
    np.eye(2, dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)
_PAULI2 = [np.kron(p, q) for p in _PAULI for q in _PAULI]


@dataclass(frozen=True)
class TomographyRecord:
    alice: str
    bob: str
    count: float
    integration_s: float

    def projector(self) -> np.ndarray:
        return np.kron(_setting(self.alice).projector(), _setting(self.bob).projector())


def _setting(label: str | AnalyzerSetting) -> AnalyzerSetting:
    if isinstance(label, AnalyzerSetting):
        return label
    if label not in TOMOGRAPHY_SETTINGS:
        raise ConfigurationError(f"unknown tomography setting {label!r}")
    return TOMOGRAPHY_SETTINGS[label]


@dataclass(frozen=True)
class TomographyData:
    records: tuple[TomographyRecord, ...]

    def __post_init__(self):
        recs = tuple(self.records)
        object.__setattr__(self, "records", recs)
        for r in recs:
            if r.count < 0 or not math.isfinite(r.count):
                raise ConfigurationError("tomography counts must be finite and >= 0")
            if not r.integration_s > 0:
                raise ConfigurationError("integration time must be > 0")
            _setting(r.alice), _setting(r.bob)

    @classmethod
    def from_counts(cls, counts: Mapping[tuple[str, str], float], integration_s: float | Mapping = 1.0) -> "TomographyData":
        recs = []
        for key in CANONICAL_ORDER:
            if key not in counts:
                raise ConfigurationError(f"missing tomography setting {key}")
            t = integration_s[key] if isinstance(integration_s, Mapping) else integration_s
            recs.append(TomographyRecord(key[0], key[1], float(counts[key]), float(t)))
        return cls(tuple(recs))

    @classmethod
    def exact(cls, state: TwoQubitState, total_rate: float = 1.0, integration_s: float = 1.0) -> "TomographyData":
        """Noise-free expected counts: total_rate * t * Tr(rho Pi) for each setting."""
        recs = []
        for a, b in CANONICAL_ORDER:
            proj = np.kron(_setting(a).projector(), _setting(b).projector())
            p = float(np.real(np.trace(state.rho @ proj)))
            recs.append(TomographyRecord(a, b, total_rate * integration_s * max(p, 0.0), integration_s))
        return cls(tuple(recs))

    def check_complete(self) -> None:
        keys = [(r.alice, r.bob) for r in self.records]
        missing = set(CANONICAL_ORDER) - set(keys)
        if missing:
            raise ConfigurationError(f"tomography data is missing settings {sorted(missing)}")

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        proj = np.array([r.projector() for r in self.records])
        counts = np.array([r.count for r in self.records], dtype=float)
        times = np.array([r.integration_s for r in self.records], dtype=float)
        return proj, counts, times

    @property
    def total_counts(self) -> float:
        return float(sum(r.count for r in self.records))


@dataclass
class LinearEstimate:
    state: TwoQubitState
    physical: bool
    min_eigenvalue: float


def tomography_linear(data: TomographyData) -> LinearEstimate:
    """Invert rates = N * Tr(rho Pi_k) over the Pauli basis; flags negative eigenvalues."""
    proj, counts, times = data.arrays()
    design = np.array([[np.real(np.trace(p @ s)) / 4.0 for s in _PAULI2] for p in proj])
    if np.linalg.matrix_rank(design, tol=1e-10) < 16:
        raise InversionError("tomography design is singular (duplicate or missing settings)")
    rates = counts / times
    coef, *_ = np.linalg.lstsq(design, rates, rcond=None)
    if not coef[0] > 0:
        raise InversionError("reconstructed flux is not positive (no counts)")
    rho = sum(c / coef[0] * s for c, s in zip(coef, _PAULI2)) / 4.0
    rho = (rho + rho.conj().T) / 2.0
    state = TwoQubitState(rho)
    lam = state.min_eigenvalue()
    return LinearEstimate(state, lam >= -TOL, lam)


def project_to_physical(rho: np.ndarray) -> np.ndarray:
    """Closest density matrix in eigenvalues (simplex projection of the spectrum)."""
    h = (rho + rho.conj().T) / 2.0
    w, v = np.linalg.eigh(h)
    w = w / w.sum() if w.sum() > 0 else np.full(4, 0.25)
    # Euclidean projection of the eigenvalues onto the probability simplex.
    u = np.sort(w)[::-1]
    css = np.cumsum(u)
    k = np.nonzero(u * np.arange(1, 5) > (css - 1.0))[0][-1]
    tau = (css[k] - 1.0) / (k + 1)
    w = np.clip(w - tau, 0.0, None)
    return (v * w) @ v.conj().T


_TRIL = np.tril_indices(4)
_OFF = np.tril_indices(4, -1)


def _t_from_params(x: np.ndarray) -> np.ndarray:
    t = np.zeros((4, 4), dtype=complex)
    t[np.diag_indices(4)] = x[:4]
    t[_OFF] = x[4:10] + 1j * x[10:16]
    return t


def _params_from_t(t: np.ndarray) -> np.ndarray:
    return np.concatenate((np.real(np.diag(t)), np.real(t[_OFF]), np.imag(t[_OFF])))


def lower_cholesky_factor(rho: np.ndarray) -> np.ndarray:
    """Lower-triangular T with T^dagger T = rho (rho must be positive definite)."""
    j = np.eye(4)[::-1]
    lb = np.linalg.cholesky(j @ rho @ j)
    return (j @ lb @ j).conj().T


@dataclass
class TomographyResult:
    rho: TwoQubitState
    fidelity_to_target: float
    log_likelihood: float
    iterations_used: int
    converged: bool
    status: str
    history: list[float] = field(default_factory=list, repr=False)


def tomography_mle(
    data: TomographyData,
    target: BellTarget = BellTarget(),
    ftol: float = 1e-10,
    max_iter: int = 10_000,
    init_mixing: float = 1e-3,
) -> TomographyResult:
    """Maximum-likelihood state under the extended Poisson model mu_k = t_k * Tr(T^dag T Pi_k).

    The objective is the Poisson deviance, which is zero for a perfect fit, so the
    relative tolerance is effectively absolute near the optimum.
    """
    data.check_complete()
    proj, counts, times = data.arrays()
    if counts.sum() <= 0:
        raise ConfigurationError("tomography data has no counts")
    lin = tomography_linear(data)
    rho0 = project_to_physical(lin.state.rho)
    rho0 = (1.0 - init_mixing) * rho0 + init_mixing * np.eye(4) / 4.0
    # Scale so the fitted flux is O(1); mu_k = scale * t_k * Tr(T^dag T Pi_k).
    scale = counts.sum() / np.sum(times * np.real(np.einsum("ij,kji->k", rho0, proj)))
    x0 = _params_from_t(lower_cholesky_factor(rho0))
    pos = counts > 0
    sat = np.zeros_like(counts)
    sat[pos] = counts[pos] * np.log(counts[pos])

    def objective(x):
        t = _t_from_params(x)
        m = t.conj().T @ t
        probs = np.real(np.einsum("ij,kji->k", m, proj))
        mu = np.maximum(scale * times * probs, 1e-300)
        dev = np.sum(mu - counts) - np.sum(counts[pos] * np.log(mu[pos])) + np.sum(sat)
        w = scale * times * (1.0 - np.where(pos, counts / mu, 0.0))
        g = 2.0 * t @ np.einsum("k,kij->ij", w, proj)
        grad = np.concatenate((np.real(np.diag(g)), np.real(g[_OFF]), np.imag(g[_OFF])))
        return dev, grad

    history = [objective(x0)[0]]

    def record(xk):
        history.append(objective(xk)[0])

    res = minimize(objective, x0, jac=True, method="L-BFGS-B", callback=record,
                   options={"ftol": ftol, "gtol": 1e-12, "maxiter": max_iter, "maxcor": 30})
    # Starting exactly at the optimum makes the line search report failure.
    converged = bool(res.success) or float(np.max(np.abs(res.jac))) < 1e-8 * max(counts.sum(), 1.0)
    t = _t_from_params(res.x)
    m = t.conj().T @ t
    rho = m / np.real(np.trace(m))
    rho = (rho + rho.conj().T) / 2.0
    state = TwoQubitState(rho)
    if not state.is_physical():
        rho = project_to_physical(rho)
        state = TwoQubitState(rho)
    # Log-likelihood (up to the count-only constant) as the negative deviance.
    return TomographyResult(
        rho=state,
        fidelity_to_target=fidelity(state, target),
        log_likelihood=-float(res.fun),
        iterations_used=int(res.nit),
        converged=converged,
        status="converged" if converged else f"not converged: {res.message}",
        history=[-h for h in history],
    )


def trace_distance(r1: TwoQubitState, r2: TwoQubitState) -> float:
    d = r1.rho - r2.rho
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh((d + d.conj().T) / 2.0))))


def records_from_rows(rows: Iterable[tuple[str, str, float, float]]) -> TomographyData:
    return TomographyData(tuple(TomographyRecord(a, b, float(n), float(t)) for a, b, n, t in rows))
