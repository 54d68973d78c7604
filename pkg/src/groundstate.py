"""Imaginary-time ground state of the trapped m_F = -1 component."""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from tqdm import tqdm

from errors import ConfigError, ConvergenceError, DivergenceError
from fieldmodel import FieldSchedule, HarmonicTrapSpec, potential_on_grid
from grid import Grid
from zeeman import RB87, SpeciesConstants

logger = logging.getLogger(__name__)

TRAPPED_LEVEL = -1


@dataclass
class GroundStateResult:
    psi: np.ndarray
    mu: float
    energy: float
    residual: float
    iterations: int
    n_atoms: float
    virial: float = float("nan")
    converged: bool = True
    history: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return {
            "mu_joule": self.mu,
            "energy_joule": self.energy,
            "residual_joule": self.residual,
            "iterations": self.iterations,
            "n_atoms": self.n_atoms,
            "virial_residual": self.virial,
            "converged": self.converged,
        }


def thomas_fermi_mu(n_atoms: float, trap, species: SpeciesConstants = RB87) -> float:
    """μ_TF = (ħω̄/2)(15 N a / a_ho)^{2/5} with a = a_{-1,-1}."""
    omegas = np.asarray(trap.omega if isinstance(trap, HarmonicTrapSpec) else trap, dtype=float)
    if n_atoms <= 0 or np.any(omegas <= 0):
        raise ConfigError("thomas_fermi_mu needs N > 0 and a confining trap")
    a = species.scattering_matrix()[0, 0]
    omega_bar = float(np.prod(omegas) ** (1.0 / 3.0))
    a_ho = np.sqrt(species.hbar / (species.mass_kg * omega_bar))
    parameter = n_atoms * a / a_ho
    if parameter <= 0:
        logger.warning("thomas_fermi_mu: scattering length %.3g m gives no TF regime; returning 0", a)
        return 0.0
    if parameter < 10:
        logger.warning("thomas_fermi_mu: N·a/a_ho = %.3g is not >> 1, TF estimate unreliable", parameter)
    return 0.5 * species.hbar * omega_bar * (15.0 * parameter) ** 0.4


class _Functional:
    """Single-component GP energy pieces on a grid with a static potential."""

    def __init__(self, grid: Grid, potential, g: float, species: SpeciesConstants):
        self.grid = grid
        self.V = potential
        self.g = g
        self.species = species

    def parts(self, psi):
        density = np.abs(psi) ** 2
        kin = float(self.grid.kinetic_energy(psi, self.species.mass_kg, self.species.hbar))
        pot = float(self.grid.integrate(self.V * density))
        inter = float(0.5 * self.g * self.grid.integrate(density**2))
        return kin, pot, inter

    def hamiltonian(self, psi):
        sp = self.species
        kinetic = -sp.hbar**2 / (2.0 * sp.mass_kg) * self.grid.laplacian(psi)
        return kinetic + (self.V + self.g * np.abs(psi) ** 2) * psi


def energy_functional(psi, grid: Grid, potential, g: float, species: SpeciesConstants = RB87) -> float:
    """E[ψ] = ∫ ħ²|∇ψ|²/2M + V|ψ|² + g|ψ|⁴/2 dV."""
    return float(sum(_Functional(grid, potential, g, species).parts(psi)))


def chemical_potential(psi, grid: Grid, potential, g: float, species: SpeciesConstants = RB87) -> float:
    """μ = ∫ψ*[-ħ²∇²/2M + V + g|ψ|²]ψ dV / N (interaction counted once)."""
    kin, pot, inter = _Functional(grid, potential, g, species).parts(psi)
    return (kin + pot + 2.0 * inter) / float(grid.norm(psi))


def virial_residual(psi, grid: Grid, potential, g: float, species: SpeciesConstants = RB87) -> float:
    """|2E_kin - 2E_pot + 3E_int| / E for a harmonic potential."""
    kin, pot, inter = _Functional(grid, potential, g, species).parts(psi)
    return abs(2.0 * kin - 2.0 * pot + 3.0 * inter) / (kin + pot + inter)


def _initial_guess(grid: Grid, V, g: float, n_atoms: float, omegas, species: SpeciesConstants):
    mu_tf = thomas_fermi_mu(n_atoms, omegas, species) if g > 0 else 0.0
    if mu_tf > 0:
        radii = np.sqrt(2.0 * mu_tf / (species.mass_kg * np.asarray(omegas) ** 2))
        spacings = min(a.spacing for a in grid.axes)
        if np.min(radii) > 4.0 * spacings:
            density = np.clip(mu_tf - V, 0.0, None) / g
            logger.debug("Thomas-Fermi initial guess, μ_TF/h = %.1f Hz", mu_tf / (2 * np.pi * species.hbar))
            return np.sqrt(density).astype(complex)
        logger.info("Thomas-Fermi radius under-resolved; using Gaussian initial guess")
    x, y, z = grid.cartesian_coordinates()
    widths = np.sqrt(species.hbar / (species.mass_kg * np.asarray(omegas)))
    gauss = np.exp(-(np.square(x) / widths[0]**2 + np.square(y) / widths[1]**2
                     + np.square(z) / widths[2]**2) / 2.0)
    return np.broadcast_to(gauss, grid.shape).astype(complex)


def _normalize(psi, grid: Grid, n_atoms: float):
    norm = float(grid.norm(psi))
    if not np.isfinite(norm) or norm <= 0:
        raise DivergenceError("Imaginary-time state lost its norm")
    return psi * np.sqrt(n_atoms / norm)


def solve_ground_state(schedule: FieldSchedule, n_atoms: float, grid: Grid, tol: float = 1e-10,
                       max_iterations: int = 20000, refinements: int = 2,
                       initial: Optional[np.ndarray] = None, progress: bool = False) -> GroundStateResult:
    """Imaginary-time Strang propagation of the m_F = -1 GP equation at t = 0.

    The step starts at 0.01/ω_max, is halved whenever the energy rises, and is
    halved `refinements` more times after convergence to remove the splitting
    bias. Raises DivergenceError for a non-confining potential and
    ConvergenceError (carrying the best iterate) when `tol` is not reached.
    """
    if not n_atoms > 0:
        raise ConfigError("Particle number must be positive")
    species = schedule.species
    trap = schedule.with_field_offset(0.0)
    omegas = trap.trap_omegas(0.0)
    if np.any(omegas <= 0):
        raise DivergenceError("Trap is not confining for m_F = -1 at t = 0")
    V = potential_on_grid(trap, TRAPPED_LEVEL, grid, 0.0)
    g = float(species.coupling_matrix()[0, 0])
    functional = _Functional(grid, V, g, species)
    hbar, mass = species.hbar, species.mass_kg

    psi = initial if initial is not None else _initial_guess(grid, V, g, n_atoms, omegas, species)
    psi = _normalize(np.asarray(psi, dtype=complex), grid, n_atoms)

    def step(state, dtau):
        state = state * np.exp(-(V + g * np.abs(state) ** 2) * dtau / (2.0 * hbar))
        state = grid.apply_kinetic_phase(state, dtau, mass, hbar, imaginary=True)
        state = state * np.exp(-(V + g * np.abs(state) ** 2) * dtau / (2.0 * hbar))
        return _normalize(state, grid, n_atoms)

    dtau = 0.01 / float(np.max(omegas))
    min_dtau = dtau * 1e-6
    energy = sum(functional.parts(psi))
    history = [energy]
    iterations = 0
    stage = 0
    bar = tqdm(total=max_iterations, desc="Ground state", disable=not progress, leave=False)
    try:
        while True:
            converged = False
            for _ in range(max_iterations):
                candidate = step(psi, dtau)
                new_energy = sum(functional.parts(candidate))
                iterations += 1
                bar.update(1)
                if not np.isfinite(new_energy):
                    raise DivergenceError(f"Energy became non-finite after {iterations} iterations")
                if new_energy > energy * (1.0 + 1e-14) + 1e-40:
                    dtau *= 0.5
                    if dtau < min_dtau:
                        raise ConvergenceError("Imaginary time step underflow",
                                               best=_result(psi, functional, grid, n_atoms, iterations,
                                                            False, history))
                    continue
                change = abs(new_energy - energy) / abs(new_energy)
                psi, energy = candidate, new_energy
                history.append(energy)
                if change < tol:
                    converged = True
                    break
            if not converged:
                raise ConvergenceError(
                    f"Ground state did not reach tol = {tol:g} within {max_iterations} iterations",
                    best=_result(psi, functional, grid, n_atoms, iterations, False, history))
            if stage >= refinements:
                break
            stage += 1
            dtau *= 0.5
    finally:
        bar.close()

    result = _result(psi, functional, grid, n_atoms, iterations, True, history)
    logger.info("ground state: μ/h = %.2f Hz after %d iterations (virial %.2e)",
                result.mu / (2 * np.pi * hbar), iterations, result.virial)
    return result


def _result(psi, functional: _Functional, grid: Grid, n_atoms, iterations, converged, history):
    kin, pot, inter = functional.parts(psi)
    mu = (kin + pot + 2.0 * inter) / n_atoms
    h_psi = functional.hamiltonian(psi)
    residual = float(np.sqrt(grid.norm(h_psi - mu * psi) / n_atoms))
    virial = abs(2.0 * kin - 2.0 * pot + 3.0 * inter) / (kin + pot + inter)
    phase = np.angle(psi.flat[int(np.argmax(np.abs(psi)))])
    return GroundStateResult(psi=psi * np.exp(-1j * phase), mu=mu, energy=kin + pot + inter,
                             residual=residual, iterations=iterations, n_atoms=n_atoms,
                             virial=virial, converged=converged, history=list(history))
