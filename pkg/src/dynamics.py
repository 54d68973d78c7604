"""Real-time propagation of the three rotating-frame GP components.

Diagonal terms carry the trap potentials relative to the nominal trap bottom,
the density-density interactions, the asymmetric Breit-Rabi offset on
m_F = +1 and the imaginary absorber. The rf drive couples neighbouring
sublevels with (ħΩ/2)·e^{∓iφ(t)}, φ = ∫Δ_rf dt.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import linalg
from tqdm import tqdm

from errors import ConfigError, NonFiniteState, StepSizeUnderflow
from fieldmodel import (FieldSchedule, accumulated_detuning_phase, potential_on_grid,
                        sudden_release)
from grid import AbsorbingLayer, Grid, check_nyquist, regrid
from groundstate import solve_ground_state
from zeeman import LEVELS, LEVEL_NAMES

logger = logging.getLogger(__name__)

SPLIT_STEP = "split-step"
DOPRI5 = "dopri5"
METHODS = (SPLIT_STEP, DOPRI5)

# Dormand-Prince 5(4): stage nodes, stage weights, 5th-order weights, error weights
_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_DP_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)
_STOP_EPS = 1e-12


@dataclass
class SpinorState:
    """Components ordered (-1, 0, +1) along the leading axis."""
    psi: np.ndarray
    grid: Grid
    t: float = 0.0
    phase: float = 0.0

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=complex)
        if self.psi.shape != (3,) + tuple(self.grid.shape):
            raise ConfigError(f"Spinor shape {self.psi.shape} does not match 3 x {self.grid.shape}")

    @property
    def norms(self) -> np.ndarray:
        return np.asarray(self.grid.norm(self.psi), dtype=float)

    @property
    def total(self) -> float:
        return float(np.sum(self.norms))

    def component(self, level: int) -> np.ndarray:
        return self.psi[level + 1]

    def copy(self) -> "SpinorState":
        return SpinorState(self.psi.copy(), self.grid, self.t, self.phase)

    @classmethod
    def from_ground_state(cls, result, grid: Grid, t: float = 0.0) -> "SpinorState":
        """All atoms in m_F = -1, empty m_F = 0 and +1."""
        psi = np.zeros((3,) + tuple(grid.shape), dtype=complex)
        psi[0] = result.psi if hasattr(result, "psi") else result
        return cls(psi, grid, t, 0.0)


@dataclass
class PropagatorConfig:
    method: str = SPLIT_STEP
    rtol: float = 1e-5
    atol: float = 1e-8
    max_step: float = 5e-5
    min_step: float = 1e-10
    initial_step: float = 1e-5
    sample_interval: float = 5e-4
    snapshot_times: Tuple[float, ...] = ()
    absorber: Optional[AbsorbingLayer] = field(default_factory=AbsorbingLayer)
    absorbed_levels: Tuple[int, ...] = LEVELS
    interactions: bool = True
    regrid_times: Tuple[float, ...] = ()
    regrid_factor: int = 2
    regrid_keep_spacing: bool = True
    expected_velocity: Optional[float] = None
    progress: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"Unknown propagation method {self.method!r}; choose from {METHODS}")
        if not (self.rtol > 0 and self.atol > 0):
            raise ConfigError("Integrator tolerances must be positive")
        if not 0 < self.min_step <= self.initial_step:
            raise ConfigError("Need 0 < min_step <= initial_step")
        if not self.max_step >= self.min_step:
            raise ConfigError("max_step must not be below min_step")
        if not 0 < self.sample_interval <= 1e-3:
            raise ConfigError("Particle numbers must be sampled at 1 kHz or faster")
        if any(level not in LEVELS for level in self.absorbed_levels):
            raise ConfigError(f"absorbed_levels must be drawn from {LEVELS}")


@dataclass
class Trajectory:
    times: List[float] = field(default_factory=list)
    norms: List[np.ndarray] = field(default_factory=list)
    snapshots: List[SpinorState] = field(default_factory=list)
    final: Optional[SpinorState] = None
    accepted: int = 0
    rejected: int = 0
    wall_time: float = 0.0

    def record(self, state: SpinorState):
        self.times.append(state.t)
        self.norms.append(state.norms)

    def to_dataframe(self) -> pd.DataFrame:
        norms = np.asarray(self.norms, dtype=float).reshape(-1, 3)
        data = {"t_ms": np.asarray(self.times) * 1e3}
        for i, level in enumerate(LEVELS):
            data[f"N_{LEVEL_NAMES[level]}"] = norms[:, i]
        return pd.DataFrame(data)

    def fractions(self) -> np.ndarray:
        """Final per-component norms relative to the initial total."""
        return np.asarray(self.norms[-1]) / float(np.sum(self.norms[0]))


class SpinorHamiltonian:
    """Rotating-frame three-component GP Hamiltonian on a fixed grid."""

    def __init__(self, schedule: FieldSchedule, grid: Grid, config: PropagatorConfig):
        self.schedule = schedule
        self.grid = grid
        self.config = config
        sp = schedule.species
        self.hbar = sp.hbar
        self.mass = sp.mass_kg
        self.g = sp.coupling_matrix() if config.interactions else np.zeros((3, 3))
        self._potential_key = None
        self._potential = None
        self.absorber = None
        if config.absorber is not None and config.absorbed_levels:
            W = grid.absorber_potential(config.absorber)
            self.absorber = np.stack([W if level in config.absorbed_levels else np.zeros(grid.shape)
                                      for level in LEVELS])

    def potentials(self, t: float) -> np.ndarray:
        """Real diagonal potentials (3, *shape): V_trap,m plus the constant frame offsets."""
        s = self.schedule
        key = (s.b_bot(t), tuple(s.trap_omegas(t)), s.gradient(t))
        if key != self._potential_key:
            self._potential = np.stack([potential_on_grid(s, level, self.grid, t) for level in LEVELS])
            self._potential_key = key
        mismatch = self.hbar * s.bottom_mismatch(t)
        offsets = np.array([mismatch, 0.0, s.v_br(t) - mismatch])
        return self._potential + offsets.reshape((3,) + (1,) * self.grid.ndim)

    def coupling(self, t: float) -> np.ndarray:
        """3x3 ladder coupling (J) at time t."""
        rabi = self.schedule.rabi(t)
        H = np.zeros((3, 3), dtype=complex)
        if rabi == 0:
            return H
        phi = accumulated_detuning_phase(self.schedule, t)
        upper = 0.5 * self.hbar * rabi * np.exp(-1j * phi)
        H[0, 1] = H[1, 2] = upper
        H[1, 0] = H[2, 1] = np.conj(upper)
        return H

    def diagonal(self, psi, t: float) -> np.ndarray:
        density = np.abs(psi) ** 2
        D = self.potentials(t) + np.tensordot(self.g, density, axes=1)
        if self.absorber is not None:
            D = D - 1j * self.absorber
        return D

    def apply(self, psi, t: float) -> np.ndarray:
        """H ψ for all three components."""
        kinetic = -self.hbar**2 / (2.0 * self.mass) * self.grid.laplacian(psi)
        return kinetic + self.diagonal(psi, t) * psi + np.tensordot(self.coupling(t), psi, axes=1)

    def time_derivative(self, psi, t: float) -> np.ndarray:
        return -1j / self.hbar * self.apply(psi, t)

    def strang_step(self, psi, t: float, dt: float) -> np.ndarray:
        """V/2 · C/2 · T · C/2 · V/2 with all time-dependent pieces at the midpoint."""
        tm = t + 0.5 * dt
        half = 0.5 * dt / self.hbar
        psi = psi * np.exp(-1j * self.diagonal(psi, tm) * half)
        C = self.coupling(tm)
        U = linalg.expm(-1j * C * half) if np.any(C) else None
        if U is not None:
            psi = np.tensordot(U, psi, axes=1)
        psi = self.grid.apply_kinetic_phase(psi, dt, self.mass, self.hbar)
        if U is not None:
            psi = np.tensordot(U, psi, axes=1)
        return psi * np.exp(-1j * self.diagonal(psi, tm) * half)

    def dopri_step(self, psi, t: float, dt: float):
        """One Dormand-Prince 5(4) step; returns (5th-order state, error estimate)."""
        stages = []
        for c, row in zip(_DP_C, _DP_A):
            y = psi
            for a, k in zip(row, stages):
                if a:
                    y = y + dt * a * k
            stages.append(self.time_derivative(y, t + c * dt))
        new = psi + dt * sum(b * k for b, k in zip(_DP_B, stages) if b)
        error = dt * sum(e * k for e, k in zip(_DP_E, stages) if e)
        return new, error


def rhs(state: SpinorState, schedule: FieldSchedule, t: Optional[float] = None,
        config: Optional[PropagatorConfig] = None) -> np.ndarray:
    """∂ψ/∂t of all components at time t (defaults to the state's time)."""
    t = state.t if t is None else t
    schedule.check_time(t)
    return SpinorHamiltonian(schedule, state.grid, config or PropagatorConfig()).time_derivative(state.psi, t)


def _stops(t0: float, schedule: FieldSchedule, config: PropagatorConfig) -> List[float]:
    samples = np.arange(t0, schedule.t_max, config.sample_interval)
    points = set(float(t) for t in samples[1:])
    points.update(schedule.breakpoints())
    points.update(config.snapshot_times)
    points.update(config.regrid_times)
    points.add(schedule.t_max)
    stops = []
    for t in sorted(t for t in points if t0 + _STOP_EPS < t <= schedule.t_max):
        # near-coincident stops collapse onto the later one
        if stops and t - stops[-1] <= _STOP_EPS:
            stops[-1] = t
        else:
            stops.append(t)
    return stops


def _contains(times, t, eps=_STOP_EPS):
    return any(abs(t - s) <= eps for s in times)


def propagate(state: SpinorState, schedule: FieldSchedule,
              config: Optional[PropagatorConfig] = None) -> Trajectory:
    """Integrate from state.t to schedule.t_max with adaptive step control.

    Steps never straddle schedule breakpoints, sample times, snapshot times or
    re-gridding times. Split-step error is estimated by step doubling, the
    Dormand-Prince error by its embedded 4th-order solution.
    """
    config = config or PropagatorConfig()
    schedule.check_time(state.t)
    if config.expected_velocity is not None:
        check_nyquist(state.grid, config.expected_velocity, schedule.species.mass_kg, schedule.species.hbar)

    start = time.time()
    state = state.copy()
    hamiltonian = SpinorHamiltonian(schedule, state.grid, config)
    reference = max(state.total, 1e-300)
    trajectory = Trajectory()
    trajectory.record(state)
    if _contains(config.snapshot_times, state.t):
        trajectory.snapshots.append(state.copy())

    dt = min(config.initial_step, config.max_step)
    order = 2 if config.method == SPLIT_STEP else 4
    bar = tqdm(total=round((schedule.t_max - state.t) * 1e3, 3), desc=f"Propagating {schedule.name}",
               unit="ms", disable=not config.progress, leave=False)
    try:
        for stop in _stops(state.t, schedule, config):
            while state.t < stop - 1e-13:
                step = min(dt, config.max_step, stop - state.t)
                if config.method == SPLIT_STEP:
                    full = hamiltonian.strang_step(state.psi, state.t, step)
                    mid = hamiltonian.strang_step(state.psi, state.t, 0.5 * step)
                    candidate = hamiltonian.strang_step(mid, state.t + 0.5 * step, 0.5 * step)
                    error = (candidate - full) / 3.0
                else:
                    candidate, error = hamiltonian.dopri_step(state.psi, state.t, step)
                scale = config.atol * np.sqrt(reference) + config.rtol * np.sqrt(state.total)
                err = float(np.sqrt(np.sum(state.grid.norm(error)))) / scale
                if not np.isfinite(err):
                    trajectory.rejected += 1
                    dt = 0.2 * step
                    if dt < config.min_step:
                        raise NonFiniteState(f"Non-finite field at t = {state.t * 1e3:.4f} ms "
                                             f"down to step {step:.3g} s")
                    continue
                factor = 0.9 * (1.0 / max(err, 1e-12)) ** (1.0 / (order + 1))
                if err <= 1.0:
                    state.psi = candidate
                    state.t += step
                    trajectory.accepted += 1
                    bar.update(round(step * 1e3, 6))
                    if step >= min(dt, config.max_step) * (1 - 1e-9):
                        dt = step * min(2.0, max(0.2, factor))
                else:
                    trajectory.rejected += 1
                    dt = step * min(1.0, max(0.2, factor))
                    if dt < config.min_step:
                        raise StepSizeUnderflow(
                            f"Step size {dt:.3g} s below minimum at t = {state.t * 1e3:.4f} ms "
                            f"(error ratio {err:.3g})", t=state.t, dt=dt)
            state.t = stop
            state.phase = accumulated_detuning_phase(schedule, stop)
            norms = state.norms
            if not np.all(np.isfinite(norms)):
                raise NonFiniteState(f"Non-finite norms at t = {stop * 1e3:.4f} ms")
            trajectory.record(state)
            if _contains(config.snapshot_times, stop):
                trajectory.snapshots.append(state.copy())
            if _contains(config.regrid_times, stop):
                new_grid = state.grid.expanded(config.regrid_factor, config.regrid_keep_spacing)
                logger.info("t = %.2f ms: expanding grid %r -> %r", stop * 1e3, state.grid, new_grid)
                state = SpinorState(regrid(state.psi, state.grid, new_grid), new_grid, state.t, state.phase)
                hamiltonian = SpinorHamiltonian(schedule, new_grid, config)
    finally:
        bar.close()

    trajectory.final = state
    trajectory.wall_time = time.time() - start
    logger.info("propagation done: %d steps (%d rejected) in %.1f s; final N = %s",
                trajectory.accepted, trajectory.rejected, trajectory.wall_time,
                np.array2string(state.norms, precision=1))
    return trajectory


def sudden_release_run(n_atoms: float, schedule: FieldSchedule, grid: Grid,
                       config: Optional[PropagatorConfig] = None, ground=None) -> Trajectory:
    """Ground state in the trap at t = 0, then switch the trap off with no rf."""
    ground = ground or solve_ground_state(schedule, n_atoms, grid)
    release = sudden_release(schedule)
    return propagate(SpinorState.from_ground_state(ground, grid), release, config)


def final_fractions(trajectory: Trajectory) -> Dict[str, float]:
    fractions = trajectory.fractions()
    return {LEVEL_NAMES[level]: float(f) for level, f in zip(LEVELS, fractions)}
