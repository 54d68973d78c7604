"""Hyperfine Zeeman structure of the F=1 ground-state manifold.

Closed-form Breit-Rabi energies, rf transition frequencies, the anti-trapping
approximation for m_F = 0 and the preflight conditions for a sharp,
state-selective outcoupling resonance.
"""
import json
import logging
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import List, Union

import numpy as np
from pydantic import BaseModel, validator
from scipy import constants

from config import Config
from errors import ConfigError, DomainError
from units import GAUSS

logger = logging.getLogger(__name__)

MU_B = constants.physical_constants["Bohr magneton"][0]
BOHR_RADIUS = constants.physical_constants["Bohr radius"][0]
ATOMIC_MASS = constants.physical_constants["atomic mass constant"][0]

LEVELS = (-1, 0, 1)
LEVEL_NAMES = {-1: "m1", 0: "0", 1: "p1"}


class SpeciesConstants(BaseModel):
    """Atomic and physical constants parameterizing all physics."""

    name: str = "87Rb"
    mass_kg: float
    ahfs_joule: float
    g_i: float
    g_j: float
    g_f: float
    scattering_lengths_m: List[List[float]]
    mu_b: float = MU_B
    hbar: float = constants.hbar
    k_b: float = constants.k

    class Config:
        allow_mutation = False

    @validator("mass_kg", "ahfs_joule", "mu_b", "hbar", "k_b")
    def _positive(cls, value, field):
        if not value > 0:
            raise ValueError(f"{field.name} must be positive, got {value}")
        return value

    @validator("scattering_lengths_m")
    def _symmetric_3x3(cls, value):
        a = np.asarray(value, dtype=float)
        if a.shape != (3, 3):
            raise ValueError(f"scattering_lengths_m must be 3x3, got shape {a.shape}")
        if not np.allclose(a, a.T, rtol=0.0, atol=1e-30):
            raise ValueError("scattering_lengths_m must be symmetric")
        return value

    def scattering_matrix(self) -> np.ndarray:
        """a_{m,m'} indexed by (m+1, m'+1)."""
        return np.asarray(self.scattering_lengths_m, dtype=float)

    def coupling_matrix(self) -> np.ndarray:
        """g_{m,m'} = 4πħ²a_{m,m'}/M in J·m³."""
        return 4.0 * np.pi * self.hbar**2 * self.scattering_matrix() / self.mass_kg

    def with_scattering_length(self, a: float) -> "SpeciesConstants":
        """Copy with a single common scattering length on all channels."""
        return self.copy(update={"scattering_lengths_m": [[float(a)] * 3 for _ in range(3)]})


def rb87() -> SpeciesConstants:
    """⁸⁷Rb F=1 preset with a common scattering length of 100.4 a₀."""
    a = 100.4 * BOHR_RADIUS
    return SpeciesConstants(
        name="87Rb",
        mass_kg=86.909180527 * ATOMIC_MASS,
        ahfs_joule=constants.h * 3.417341305452145e9,
        g_i=-0.0009951414,
        g_j=2.00233113,
        g_f=-0.5,
        scattering_lengths_m=[[a] * 3 for _ in range(3)],
    )


RB87 = rb87()


def load_species(source: Union[str, Path, None] = None) -> SpeciesConstants:
    """Load a species preset by name (data/species/<name>.json) or file path."""
    source = source or Config.SPECIES
    path = Path(source)
    if not path.suffix:
        path = Config.SPECIES_DIR / f"{source}.json"
    if not path.exists():
        raise ConfigError(f"Species file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"Malformed species file {path}: {exc}")
    raw.pop("comment", None)
    try:
        return SpeciesConstants.parse_obj(raw)
    except ValueError as exc:
        raise ConfigError(f"Invalid species file {path}: {exc}")


def _check_field(B):
    B = np.asarray(B, dtype=float)
    if np.any(B < 0):
        raise DomainError("Magnetic field magnitude must be non-negative")
    return B


def _sqrt1pm1(u):
    """sqrt(1 + u) - 1 without cancellation for small u."""
    return u / (1.0 + np.sqrt(1.0 + u))


def _scalar(value):
    return float(value) if np.ndim(value) == 0 else value


def dimensionless_b(B, species: SpeciesConstants = RB87):
    """b = (g_J - g_I) μ_B B / (2 A_hfs), with ΔE_hfs = 2 A_hfs for I = 3/2."""
    B = _check_field(B)
    return _scalar((species.g_j - species.g_i) * species.mu_b * B / (2.0 * species.ahfs_joule))


def zeeman_shift(level: int, B, species: SpeciesConstants = RB87):
    """Breit-Rabi energy relative to its zero-field value, V(m, B) - V(m, 0)."""
    b = np.asarray(dimensionless_b(B, species))
    B = np.asarray(B, dtype=float)
    shift = (-level * species.g_i * species.mu_b * B
             - species.ahfs_joule * _sqrt1pm1(level * b + b**2))
    return _scalar(shift)


def zeeman_slope(level: int, B, species: SpeciesConstants = RB87):
    """dV(m, B)/dB in J/T."""
    b = np.asarray(dimensionless_b(B, species))
    db_dB = (species.g_j - species.g_i) * species.mu_b / (2.0 * species.ahfs_joule)
    slope = (-level * species.g_i * species.mu_b
             - species.ahfs_joule * (level + 2.0 * b) / (2.0 * np.sqrt(1.0 + level * b + b**2)) * db_dB)
    return _scalar(slope)


def breit_rabi_potential(level: int, B, species: SpeciesConstants = RB87):
    """-A/4 - m g_I μ_B B - A sqrt(1 + m b + b²) for the F=1 sublevel m."""
    if level not in LEVELS:
        raise DomainError(f"m_F must be one of {LEVELS}, got {level}")
    return _scalar(-1.25 * species.ahfs_joule + np.asarray(zeeman_shift(level, B, species)))


def transition_frequencies(B, species: SpeciesConstants = RB87):
    """(ω_{-1,0}, ω_{0,+1}) in rad/s at field magnitude B."""
    v_m1 = np.asarray(zeeman_shift(-1, B, species))
    v_0 = np.asarray(zeeman_shift(0, B, species))
    v_p1 = np.asarray(zeeman_shift(1, B, species))
    return _scalar((v_m1 - v_0) / species.hbar), _scalar((v_0 - v_p1) / species.hbar)


def transition_asymmetry(B, species: SpeciesConstants = RB87):
    """ω_{-1,0} - ω_{0,+1} = A/ħ [2√(1+b²) - √(1-b+b²) - √(1+b+b²)]."""
    b = np.asarray(dimensionless_b(B, species))
    bracket = 2.0 * _sqrt1pm1(b**2) - _sqrt1pm1(-b + b**2) - _sqrt1pm1(b + b**2)
    return _scalar(species.ahfs_joule * bracket / species.hbar)


def breit_rabi_offset(B, species: SpeciesConstants = RB87):
    """V_BR = V(-1) + V(+1) - 2 V(0), the asymmetric splitting at the trap bottom."""
    return _scalar(species.hbar * np.asarray(transition_asymmetry(B, species)))


def anti_trap_ratio(b_bot, species: SpeciesConstants = RB87):
    """|V_trap,0| / |V_trap,-1| to first order, (g_J-g_I)² μ_B B_bot / (4|g_F| A_hfs)."""
    b_bot = _check_field(b_bot)
    b = np.asarray(dimensionless_b(b_bot, species))
    if np.any(b**2 > 1e-2):
        logger.warning("anti_trap_ratio: b² = %.3g exceeds 1e-2, first-order result unreliable",
                       float(np.max(b**2)))
    ratio = ((species.g_j - species.g_i)**2 * species.mu_b * b_bot
             / (4.0 * abs(species.g_f) * species.ahfs_joule))
    return _scalar(ratio)


def chemical_potential_field(mu, species: SpeciesConstants = RB87):
    """Field equivalent 2μ/μ_B of a chemical potential, in tesla."""
    return 2.0 * mu / species.mu_b


@dataclass
class CheckResult:
    """Outcome of one 'much greater than' feasibility condition."""
    name: str
    passed: bool
    ratio: float
    lhs: float
    rhs: float
    threshold: float
    units: str

    def to_dict(self):
        return asdict(self)


def sharp_resonance_check(mu, rabi, species: SpeciesConstants = RB87,
                          threshold: float = Config.SHARP_RESONANCE_MIN_RATIO) -> CheckResult:
    """μ² ≫ (ħΩ_rf)²; sides reported in (2π Hz)², i.e. (μ/h)² and (Ω/2π)²."""
    if mu < 0 or rabi < 0:
        raise DomainError("sharp_resonance_check needs μ >= 0 and Ω_rf >= 0")
    lhs = (mu / constants.h) ** 2
    rhs = (rabi / (2.0 * np.pi)) ** 2
    ratio = float("inf") if rabi == 0 else (mu / (species.hbar * rabi)) ** 2
    return CheckResult("sharp_resonance", ratio >= threshold, ratio, lhs, rhs, threshold, "Hz^2")


def state_selectivity_check(b_bot, mu, species: SpeciesConstants = RB87,
                            threshold: float = Config.STATE_SELECTIVITY_MIN_RATIO) -> CheckResult:
    """B_bot² ≫ 16 μ A_hfs / ((g_J-g_I)² μ_B²); sides reported in G²."""
    _check_field(b_bot)
    if not mu > 0:
        raise DomainError("state_selectivity_check needs μ > 0")
    required = 16.0 * mu * species.ahfs_joule / ((species.g_j - species.g_i) ** 2 * species.mu_b ** 2)
    ratio = b_bot ** 2 / required
    return CheckResult("state_selectivity", ratio >= threshold, ratio,
                       (b_bot / GAUSS) ** 2, required / GAUSS ** 2, threshold, "G^2")


def resonance_amplitude(rabi, detuning):
    """Rabi-oscillation amplitude Ω² / (Ω² + δ²) of an off-resonant two-level pair."""
    rabi = np.asarray(rabi, dtype=float)
    if np.any(rabi < 0):
        raise DomainError("Rabi frequency must be non-negative")
    denom = rabi**2 + np.asarray(detuning, dtype=float) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        amp = np.where(denom > 0, rabi**2 / np.where(denom > 0, denom, 1.0), 0.0)
    return _scalar(amp)
