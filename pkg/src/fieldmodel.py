"""Time-dependent magnetic field, rf drive and the outcoupling sequence."""
import bisect
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, validator

from config import Config
from errors import ConfigError, ScheduleError
from units import (gauss_to_tesla, gradient_g_per_mm_to_t_per_m,
                   gradient_t_per_m_to_g_per_mm, hz_to_rad, ms_to_s, rad_to_hz,
                   s_to_ms, tesla_to_gauss)
from zeeman import (RB87, SpeciesConstants, anti_trap_ratio, breit_rabi_offset,
                    transition_frequencies, zeeman_shift, zeeman_slope)

logger = logging.getLogger(__name__)

_TIME_EPS = 1e-12


@dataclass(frozen=True)
class PiecewiseLinear:
    """Piecewise-linear schedule through (t, value) knots.

    Knot times are non-decreasing; a repeated time encodes a jump and the
    schedule is right-continuous there. Values are held constant outside the
    knot range.
    """
    times: Tuple[float, ...]
    values: Tuple[float, ...]

    def __post_init__(self):
        if len(self.times) != len(self.values) or not self.times:
            raise ConfigError("PiecewiseLinear needs equally many (>0) times and values")
        if any(b < a for a, b in zip(self.times, self.times[1:])):
            raise ConfigError("PiecewiseLinear knot times must be non-decreasing")
        if not all(np.isfinite(self.values)):
            raise ConfigError("PiecewiseLinear values must be finite")

    @classmethod
    def constant(cls, value: float) -> "PiecewiseLinear":
        return cls((0.0,), (float(value),))

    @classmethod
    def ramp(cls, t0: float, v0: float, t1: float, v1: float) -> "PiecewiseLinear":
        return cls((float(t0), float(t1)), (float(v0), float(v1)))

    def _segment(self, t):
        return bisect.bisect_right(self.times, t) - 1

    def value(self, t: float) -> float:
        times, values = self.times, self.values
        if t < times[0]:
            return values[0]
        if t >= times[-1]:
            return values[-1]
        i = self._segment(t)
        t0, t1 = times[i], times[i + 1]
        return values[i] + (values[i + 1] - values[i]) * (t - t0) / (t1 - t0)

    def _cumulative(self):
        areas = [self.values[0] * self.times[0]]
        for i in range(len(self.times) - 1):
            dt = self.times[i + 1] - self.times[i]
            areas.append(areas[-1] + 0.5 * (self.values[i] + self.values[i + 1]) * dt)
        return areas

    def integral(self, t: float) -> float:
        """∫₀ᵗ value(t') dt' in closed form."""
        times, values = self.times, self.values
        if t <= times[0]:
            return values[0] * t
        areas = self._cumulative()
        if t >= times[-1]:
            return areas[-1] + values[-1] * (t - times[-1])
        i = self._segment(t)
        t0, t1 = times[i], times[i + 1]
        slope = (values[i + 1] - values[i]) / (t1 - t0)
        dt = t - t0
        return areas[i] + values[i] * dt + 0.5 * slope * dt * dt

    def scaled(self, factor: float) -> "PiecewiseLinear":
        return PiecewiseLinear(self.times, tuple(v * factor for v in self.values))

    def shifted(self, offset: float) -> "PiecewiseLinear":
        return PiecewiseLinear(self.times, tuple(v + offset for v in self.values))


@dataclass(frozen=True)
class HarmonicTrapSpec:
    """Base trap frequencies (rad/s) and nominal trap-bottom field (T)."""
    omega: Tuple[float, float, float]
    b_bot: float

    def __post_init__(self):
        if len(self.omega) != 3 or any(w < 0 for w in self.omega):
            raise ConfigError("Trap frequencies must be three non-negative values")
        if self.b_bot < 0:
            raise ConfigError("Trap bottom field must be non-negative")


@dataclass(frozen=True)
class RfDriveSpec:
    """rf drive: Ω_rf(t), offset frequency ω_0 and detuning ramp Δ_rf(t)."""
    omega0: float
    rabi: PiecewiseLinear
    detuning: PiecewiseLinear
    t_on: float = 0.0
    t_off: float = 0.0

    def __post_init__(self):
        if any(v < 0 for v in self.rabi.values):
            raise ConfigError("Rabi frequency must be non-negative")
        if self.t_off < self.t_on:
            raise ConfigError("rf window must satisfy t_on <= t_off")

    def is_on(self, t: float) -> bool:
        return self.t_on <= t < self.t_off

    def rabi_at(self, t: float) -> float:
        return self.rabi.value(t) if self.is_on(t) else 0.0


@dataclass(frozen=True)
class Phase:
    """One contiguous block of the sequence with linear ramps of its targets."""
    name: str
    t_start: float
    t_end: float
    b_bot: Tuple[float, float]
    trap_scale: Tuple[float, float] = (1.0, 1.0)
    gradient: float = 0.0

    def fraction(self, t: float) -> float:
        span = self.t_end - self.t_start
        return 0.0 if span <= 0 else min(max((t - self.t_start) / span, 0.0), 1.0)

    def b_bot_at(self, t: float) -> float:
        s = self.fraction(t)
        return self.b_bot[0] + (self.b_bot[1] - self.b_bot[0]) * s

    def trap_scale_at(self, t: float) -> float:
        s = self.fraction(t)
        return self.trap_scale[0] + (self.trap_scale[1] - self.trap_scale[0]) * s


@dataclass(frozen=True)
class SequenceTimeline:
    phases: Tuple[Phase, ...]

    def __post_init__(self):
        if not self.phases:
            raise ConfigError("Sequence needs at least one phase")
        if abs(self.phases[0].t_start) > _TIME_EPS:
            raise ConfigError("First phase must start at t = 0")
        for phase in self.phases:
            if phase.t_end <= phase.t_start:
                raise ConfigError(f"Phase {phase.name!r} has non-positive duration")
        for a, b in zip(self.phases, self.phases[1:]):
            if abs(a.t_end - b.t_start) > _TIME_EPS:
                raise ConfigError(f"Phases {a.name!r} and {b.name!r} are not contiguous")

    @property
    def t_end(self) -> float:
        return self.phases[-1].t_end

    def phase_at(self, t: float) -> Phase:
        for phase in reversed(self.phases):
            if t >= phase.t_start - _TIME_EPS:
                return phase
        return self.phases[0]

    def boundaries(self) -> List[float]:
        return sorted({p.t_start for p in self.phases} | {p.t_end for p in self.phases})


@dataclass(frozen=True)
class FieldSchedule:
    """Complete time-dependent field description of one run."""
    trap: HarmonicTrapSpec
    rf: RfDriveSpec
    timeline: SequenceTimeline
    t_max: float
    species: SpeciesConstants = RB87
    field_offset: float = 0.0
    anti_trap: bool = True
    name: str = "custom"

    def __post_init__(self):
        if self.t_max < self.timeline.t_end - _TIME_EPS:
            raise ConfigError("t_max must not precede the end of the last phase")
        for phase in self.timeline.phases:
            for value in (phase.b_bot[0], phase.b_bot[1]):
                if value < 0:
                    raise ConfigError(f"Phase {phase.name!r} has a negative B_bot")
                trap_on = max(phase.trap_scale) > 0 and max(self.trap.omega) > 0
                if trap_on and value <= 0:
                    raise ConfigError(f"Phase {phase.name!r}: B_bot must be > 0 while the trap is on")
        ratio = self.rwa_ratio()
        if ratio < Config.RWA_MIN_RATIO:
            raise ConfigError(f"|ω_0|/|Δ_rf| = {ratio:.3g} violates the rotating-wave condition")

    # time-dependent scalars
    def check_time(self, t: float):
        if t < -_TIME_EPS or t > self.t_max + _TIME_EPS:
            raise ScheduleError(f"t = {t:.6g} s outside schedule range [0, {self.t_max:.6g}] s")

    def b_bot(self, t: float) -> float:
        """Nominal trap-bottom field (without the scan offset ΔB)."""
        return self.timeline.phase_at(t).b_bot_at(t)

    def trap_omegas(self, t: float) -> np.ndarray:
        return self.timeline.phase_at(t).trap_scale_at(t) * np.asarray(self.trap.omega, dtype=float)

    def curvatures(self, t: float) -> np.ndarray:
        """∂²|B|/∂x_i² such that m_F = -1 sees exactly ω_i(t) at the trap bottom."""
        sp = self.species
        slope = zeeman_slope(-1, max(self.b_bot(t), 0.0), sp)
        return sp.mass_kg * self.trap_omegas(t) ** 2 / slope

    def gradient(self, t: float) -> float:
        return self.timeline.phase_at(t).gradient

    def rabi(self, t: float) -> float:
        return self.rf.rabi_at(t)

    def detuning(self, t: float) -> float:
        return self.rf.detuning.value(t)

    def trap_on(self, t: float) -> bool:
        return bool(np.any(self.trap_omegas(t) > 0))

    def v_br(self, t: float) -> float:
        return breit_rabi_offset(self.b_bot(t), self.species)

    def frame_frequency(self, t: float) -> float:
        """Rotating-frame frequency: ω_0 while the rf drives, else ω_{-1,0} at the instantaneous B_bot."""
        if self.rf.is_on(t):
            return self.rf.omega0
        return transition_frequencies(self.b_bot(t), self.species)[0]

    def bottom_mismatch(self, t: float) -> float:
        """(V_bot,-1 - V_bot,0)/ħ minus the frame frequency at the instantaneous nominal trap bottom."""
        return transition_frequencies(self.b_bot(t), self.species)[0] - self.frame_frequency(t)

    def breakpoints(self) -> List[float]:
        """Times where a scheduled quantity may be discontinuous or kinked."""
        points = set(self.timeline.boundaries())
        points.update((self.rf.t_on, self.rf.t_off))
        points.update(self.rf.detuning.times)
        points.update(self.rf.rabi.times)
        return sorted(t for t in points if 0.0 < t < self.t_max)

    def rwa_ratio(self) -> float:
        knots = list(self.rf.detuning.values)
        largest = max(abs(v) for v in knots)
        return float("inf") if largest == 0 else abs(self.rf.omega0) / largest

    def is_axially_symmetric(self) -> bool:
        wx, wy, _ = self.trap.omega
        return bool(np.isclose(wx, wy, rtol=1e-12, atol=0.0))

    # variants
    def with_rabi(self, rabi: float) -> "FieldSchedule":
        return replace(self, rf=replace(self.rf, rabi=PiecewiseLinear.constant(rabi)))

    def with_field_offset(self, delta_b: float) -> "FieldSchedule":
        return replace(self, field_offset=float(delta_b))

    def with_anti_trap(self, enabled: bool) -> "FieldSchedule":
        return replace(self, anti_trap=bool(enabled))

    def without_rf(self) -> "FieldSchedule":
        return replace(self, rf=replace(self.rf, rabi=PiecewiseLinear.constant(0.0), t_off=self.rf.t_on))


def field_magnitude(schedule: FieldSchedule, coords, t: float):
    """|B|(x, t) = B_bot(t) + ΔB + Σ_i curv_i(t) x_i²/2 + B_grad(t) z, clamped at 0.

    coords is an (x, y, z) triple of broadcastable arrays (T, m).
    """
    schedule.check_time(t)
    x, y, z = coords
    cx, cy, cz = schedule.curvatures(t)
    B = (schedule.b_bot(t) + schedule.field_offset
         + 0.5 * (cx * np.square(x) + cy * np.square(y) + cz * np.square(z))
         + schedule.gradient(t) * np.asarray(z))
    negative = B < 0
    if np.any(negative):
        logger.debug("field_magnitude: %d points with negative |B| at t = %.4g ms clamped to 0",
                       int(np.count_nonzero(negative)), s_to_ms(t))
        B = np.where(negative, 0.0, B)
    return B


def potential_on_grid(schedule: FieldSchedule, level: int, grid, t: float):
    """V_trap,m(x, t) relative to the nominal instantaneous trap bottom (J)."""
    if level == 0 and not schedule.anti_trap:
        return np.zeros(grid.shape)
    B = field_magnitude(schedule, grid.cartesian_coordinates(), t)
    reference = schedule.b_bot(t)
    sp = schedule.species
    return np.broadcast_to(zeeman_shift(level, B, sp) - zeeman_shift(level, reference, sp),
                           grid.shape).copy()


def accumulated_detuning_phase(schedule: FieldSchedule, t: float) -> float:
    """φ(t) = ∫₀ᵗ Δ_rf(t') dt'."""
    schedule.check_time(t)
    return schedule.rf.detuning.integral(t)


def resonance_radii(schedule: FieldSchedule, t: float) -> np.ndarray:
    """Per-axis radius where [V_trap,-1 - V_trap,0]/ħ = Δ_rf(t) (harmonic limit); NaN if none."""
    sp = schedule.species
    omegas = schedule.trap_omegas(t)
    delta = schedule.detuning(t)
    factor = 1.0 + (anti_trap_ratio(schedule.b_bot(t), sp) if schedule.anti_trap else 0.0)
    radii = np.full(3, np.nan)
    for i, w in enumerate(omegas):
        if w > 0 and delta > 0:
            radii[i] = np.sqrt(2.0 * sp.hbar * delta / (factor * sp.mass_kg * w**2))
    return radii


def model_sequence_preset(species: SpeciesConstants = RB87) -> FieldSchedule:
    """Reference model sequence: 90 ms rf ramp, 5 ms trap ramp-down, release, gradient pulse."""
    b_bot = gauss_to_tesla(4.0)
    omega0 = transition_frequencies(b_bot, species)[0]
    rf = RfDriveSpec(
        omega0=omega0,
        rabi=PiecewiseLinear.constant(hz_to_rad(90.0)),
        detuning=PiecewiseLinear.ramp(0.0, hz_to_rad(319.0), ms_to_s(90.0), hz_to_rad(319.0 - 1.6 * 90.0)),
        t_on=0.0,
        t_off=ms_to_s(90.0),
    )
    residual = gauss_to_tesla(0.2)
    phases = (
        Phase("rf-outcoupling", 0.0, ms_to_s(90.0), (b_bot, b_bot)),
        Phase("trap-ramp-down", ms_to_s(90.0), ms_to_s(95.0), (b_bot, gauss_to_tesla(1.0)), (1.0, 0.1)),
        Phase("trap-off", ms_to_s(95.0), ms_to_s(110.0), (residual, residual), (0.0, 0.0)),
        Phase("gradient-pulse", ms_to_s(110.0), ms_to_s(112.0), (residual, residual), (0.0, 0.0),
              gradient_g_per_mm_to_t_per_m(1.0)),
        Phase("free-evolution", ms_to_s(112.0), ms_to_s(140.0), (residual, residual), (0.0, 0.0)),
    )
    return FieldSchedule(
        trap=HarmonicTrapSpec(tuple(hz_to_rad(f) for f in (30.0, 30.0, 15.0)), b_bot),
        rf=rf,
        timeline=SequenceTimeline(phases),
        t_max=ms_to_s(140.0),
        species=species,
        name="model-sequence",
    )


def sudden_release(schedule: FieldSchedule) -> FieldSchedule:
    """Trap switched off at t = 0 without rf; residual offset of the final phase kept."""
    residual = schedule.timeline.phases[-1].b_bot[1]
    if residual <= 0:
        residual = schedule.b_bot(0.0)
    phase = Phase("free-expansion", 0.0, schedule.t_max, (residual, residual), (0.0, 0.0))
    return replace(schedule.without_rf(), timeline=SequenceTimeline((phase,)),
                   name=f"{schedule.name}-sudden-release")


# Sequence files

class PhaseBlock(BaseModel):
    name: str
    t_start_ms: float
    t_end_ms: float
    b_bot_g: Tuple[float, float]
    trap_scale: Tuple[float, float] = (1.0, 1.0)
    gradient_g_per_mm: float = 0.0


class RfBlock(BaseModel):
    rabi_hz: List[Tuple[float, float]]
    detuning_hz: List[Tuple[float, float]]
    omega0_hz: Optional[float] = None
    t_on_ms: float = 0.0
    t_off_ms: float = 0.0

    @validator("rabi_hz", "detuning_hz")
    def _non_empty(cls, value):
        if not value:
            raise ValueError("schedule needs at least one (t_ms, hz) knot")
        return value


class SequenceFile(BaseModel):
    name: str = "custom"
    t_max_ms: float
    omega_hz: Tuple[float, float, float]
    b_bot_g: float
    rf: RfBlock
    phases: List[PhaseBlock]


def _knots(pairs, scale):
    times = tuple(ms_to_s(t) for t, _ in pairs)
    values = tuple(scale(v) for _, v in pairs)
    return PiecewiseLinear(times, values)


def schedule_from_file_model(model: SequenceFile, species: SpeciesConstants = RB87) -> FieldSchedule:
    b_bot = gauss_to_tesla(model.b_bot_g)
    omega0 = (hz_to_rad(model.rf.omega0_hz) if model.rf.omega0_hz is not None
              else transition_frequencies(b_bot, species)[0])
    rf = RfDriveSpec(
        omega0=omega0,
        rabi=_knots(model.rf.rabi_hz, hz_to_rad),
        detuning=_knots(model.rf.detuning_hz, hz_to_rad),
        t_on=ms_to_s(model.rf.t_on_ms),
        t_off=ms_to_s(model.rf.t_off_ms),
    )
    phases = tuple(
        Phase(p.name, ms_to_s(p.t_start_ms), ms_to_s(p.t_end_ms),
              tuple(gauss_to_tesla(b) for b in p.b_bot_g), tuple(p.trap_scale),
              gradient_g_per_mm_to_t_per_m(p.gradient_g_per_mm))
        for p in model.phases
    )
    return FieldSchedule(
        trap=HarmonicTrapSpec(tuple(hz_to_rad(f) for f in model.omega_hz), b_bot),
        rf=rf, timeline=SequenceTimeline(phases), t_max=ms_to_s(model.t_max_ms),
        species=species, name=model.name,
    )


def schedule_to_file_model(schedule: FieldSchedule) -> SequenceFile:
    rf = schedule.rf
    return SequenceFile(
        name=schedule.name,
        t_max_ms=s_to_ms(schedule.t_max),
        omega_hz=tuple(rad_to_hz(w) for w in schedule.trap.omega),
        b_bot_g=tesla_to_gauss(schedule.trap.b_bot),
        rf=RfBlock(
            rabi_hz=[(s_to_ms(t), rad_to_hz(v)) for t, v in zip(rf.rabi.times, rf.rabi.values)],
            detuning_hz=[(s_to_ms(t), rad_to_hz(v)) for t, v in zip(rf.detuning.times, rf.detuning.values)],
            omega0_hz=rad_to_hz(rf.omega0),
            t_on_ms=s_to_ms(rf.t_on),
            t_off_ms=s_to_ms(rf.t_off),
        ),
        phases=[
            PhaseBlock(name=p.name, t_start_ms=s_to_ms(p.t_start), t_end_ms=s_to_ms(p.t_end),
                       b_bot_g=tuple(tesla_to_gauss(b) for b in p.b_bot),
                       trap_scale=tuple(p.trap_scale),
                       gradient_g_per_mm=gradient_t_per_m_to_g_per_mm(p.gradient))
            for p in schedule.timeline.phases
        ],
    )


SEQUENCE_PRESETS = {"model-sequence": model_sequence_preset}


def load_sequence(source: Union[str, Path, None] = None,
                  species: SpeciesConstants = RB87) -> FieldSchedule:
    """Load a sequence by preset name, shipped file name or path."""
    source = source or Config.SEQUENCE
    if str(source) in SEQUENCE_PRESETS:
        return SEQUENCE_PRESETS[str(source)](species)
    path = Path(source)
    if not path.suffix:
        path = Config.SEQUENCE_DIR / f"{source}.json"
    if not path.exists():
        raise ConfigError(f"Sequence file not found: {path}")
    try:
        model = SequenceFile.parse_raw(path.read_text())
    except ValueError as exc:
        raise ConfigError(f"Invalid sequence file {path}: {exc}")
    return schedule_from_file_model(model, species)


def export_sequence(schedule: FieldSchedule, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(json.loads(schedule_to_file_model(schedule).json()), indent=2))
    return path
