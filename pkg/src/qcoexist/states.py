"""Two-qubit polarization algebra in the |HH>, |HV>, |VH>, |VV> basis."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DegenerateError

TOL = 1e-9
BELL_NAMES = ("phi_plus", "phi_minus", "psi_plus", "psi_minus")
# Angle set (a, a', b, b') reaching 2*sqrt(2) for psi_plus, whose correlation is
# E = -cos(2(a + b)).
PSI_PLUS_CHSH_ANGLES = (0.0, -math.pi / 4, math.pi / 8, 3 * math.pi / 8)


@dataclass(frozen=True, eq=False)
class TwoQubitState:
    rho: np.ndarray

    def __post_init__(self):
        rho = np.array(self.rho, dtype=complex)
        if rho.shape != (4, 4):
            raise ConfigurationError(f"density matrix must be 4x4, got {rho.shape}")
        if not np.all(np.isfinite(rho)):
            raise ConfigurationError("density matrix has non-finite entries")
        if np.max(np.abs(rho - rho.conj().T)) > TOL:
            raise ConfigurationError("density matrix is not Hermitian")
        if abs(np.trace(rho) - 1.0) > TOL:
            raise ConfigurationError(f"density matrix trace is {np.trace(rho).real:.12g}, not 1")
        # Positivity is reported by is_physical() so linear estimates can be carried and flagged.
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)

    def is_physical(self, tol: float = TOL) -> bool:
        r = self.rho
        if np.max(np.abs(r - r.conj().T)) > tol:
            return False
        if abs(np.trace(r) - 1.0) > tol:
            return False
        return bool(np.linalg.eigvalsh((r + r.conj().T) / 2).min() >= -tol)

    def min_eigenvalue(self) -> float:
        r = self.rho
        return float(np.linalg.eigvalsh((r + r.conj().T) / 2).min())

    def purity(self) -> float:
        return float(np.real(np.trace(self.rho @ self.rho)))


def _canonical_angle(theta: float) -> float:
    # Projectors are pi-periodic in the linear angle.
    return float((theta + math.pi / 2) % math.pi - math.pi / 2)


@dataclass(frozen=True)
class AnalyzerSetting:
    """Transmitted PBS port projecting onto cos(t)|H> + exp(i*chi) sin(t)|V>."""

    basis_angle_rad: float = 0.0
    circular_component: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.basis_angle_rad) and math.isfinite(self.circular_component)):
            raise ConfigurationError("analyzer angles must be finite")
        object.__setattr__(self, "basis_angle_rad", _canonical_angle(self.basis_angle_rad))

    def ket(self) -> np.ndarray:
        t = self.basis_angle_rad
        return np.array([math.cos(t), np.exp(1j * self.circular_component) * math.sin(t)])

    def projector(self) -> np.ndarray:
        k = self.ket()
        return np.outer(k, k.conj())

    def perpendicular(self) -> "AnalyzerSetting":
        return AnalyzerSetting(self.basis_angle_rad + math.pi / 2, self.circular_component)


TOMOGRAPHY_SETTINGS = {
    "H": AnalyzerSetting(0.0),
    "V": AnalyzerSetting(math.pi / 2),
    "D": AnalyzerSetting(math.pi / 4),
    "R": AnalyzerSetting(math.pi / 4, math.pi / 2),
}


@dataclass(frozen=True)
class BellTarget:
    which: str = "psi_plus"
    phase_rad: float = 0.0

    def __post_init__(self):
        if self.which not in BELL_NAMES:
            raise ConfigurationError(f"unknown Bell state {self.which!r}; expected one of {BELL_NAMES}")

    def ket(self) -> np.ndarray:
        sign = -1.0 if self.which.endswith("minus") else 1.0
        rel = sign * np.exp(1j * self.phase_rad)
        psi = np.zeros(4, dtype=complex)
        if self.which.startswith("phi"):
            psi[0], psi[3] = 1.0, rel
        else:
            psi[1], psi[2] = 1.0, rel
        return psi / math.sqrt(2.0)


def target_state(target: BellTarget) -> TwoQubitState:
    psi = target.ket()
    return TwoQubitState(np.outer(psi, psi.conj()))


def werner_mix(target: BellTarget, visibility: float) -> TwoQubitState:
    """V*|psi><psi| + (1-V)*I/4."""
    if not 0.0 <= visibility <= 1.0:
        raise ConfigurationError(f"Werner visibility must lie in [0, 1], got {visibility}")
    pure = target_state(target).rho
    return TwoQubitState(visibility * pure + (1.0 - visibility) * np.eye(4) / 4.0)


def coincidence_probability(rho: TwoQubitState, a: AnalyzerSetting, b: AnalyzerSetting) -> float:
    proj = np.kron(a.projector(), b.projector())
    return float(np.real(np.trace(rho.rho @ proj)))


def fidelity(rho: TwoQubitState, target: BellTarget) -> float:
    psi = target.ket()
    return float(np.real(psi.conj() @ rho.rho @ psi))


def correlation(rho: TwoQubitState, a: AnalyzerSetting, b: AnalyzerSetting) -> float:
    """Normalized correlation E from the four port combinations."""
    ap, bp = a.perpendicular(), b.perpendicular()
    same = coincidence_probability(rho, a, b) + coincidence_probability(rho, ap, bp)
    diff = coincidence_probability(rho, a, bp) + coincidence_probability(rho, ap, b)
    denom = same + diff
    if denom <= 0:
        raise DegenerateError("zero denominator in correlation")
    return (same - diff) / denom


def chsh_value(rho: TwoQubitState, angles: Sequence[float] = PSI_PLUS_CHSH_ANGLES) -> float:
    """S = |E(a,b) - E(a,b') + E(a',b) + E(a',b')| for linear analyzer angles."""
    a, a2, b, b2 = (AnalyzerSetting(x) for x in angles)
    s = correlation(rho, a, b) - correlation(rho, a, b2) + correlation(rho, a2, b) + correlation(rho, a2, b2)
    return abs(s)


def predicted_fringe(rho: TwoQubitState, alice_basis: float, bob_angles: Sequence[float]) -> np.ndarray:
    a = AnalyzerSetting(alice_basis)
    return np.array([coincidence_probability(rho, a, AnalyzerSetting(t)) for t in bob_angles])


def fringe_coefficients(rho: TwoQubitState, a: AnalyzerSetting) -> tuple[float, float, float]:
    """Exact (c0, c1, c2) with p(theta) = c0 + c1*cos(2 theta) + c2*sin(2 theta)."""
    p0 = coincidence_probability(rho, a, AnalyzerSetting(0.0))
    p45 = coincidence_probability(rho, a, AnalyzerSetting(math.pi / 4))
    p90 = coincidence_probability(rho, a, AnalyzerSetting(math.pi / 2))
    c0 = (p0 + p90) / 2
    return c0, (p0 - p90) / 2, p45 - c0


def fringe_visibility(rho: TwoQubitState, a: AnalyzerSetting, background: float = 0.0) -> float:
    """Visibility of a sinusoidal fringe plus a flat background (same units as rho probabilities)."""
    c0, c1, c2 = fringe_coefficients(rho, a)
    denom = c0 + background
    if denom <= 0:
        raise DegenerateError("fringe has zero mean")
    return math.hypot(c1, c2) / denom
