"""Run configuration files (experiment units) and their SI resolution."""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, validator

from analysis import FIDELITY_FORMS
from config import Config
from dynamics import METHODS, PropagatorConfig
from errors import ConfigError
from fieldmodel import FieldSchedule, load_sequence, schedule_to_file_model, sudden_release
from grid import GRID_PRESETS, AbsorbingLayer, Grid, grid_preset
from units import hz_to_rad, mg_to_tesla, ms_to_s
from zeeman import LEVELS, SpeciesConstants, load_species

logger = logging.getLogger(__name__)

# Parameters a scan may override, with their file units
OVERRIDABLE = ("n_atoms", "rabi_hz", "delta_b_mg", "grid", "rtol", "atol", "anti_trap")


class RunConfig(BaseModel):
    """One simulation run. Frequencies in Hz (ω/2π), fields in G/mG, times in ms."""

    name: str = "model-sequence"
    species: str = Config.SPECIES
    sequence: str = Config.SEQUENCE
    grid: str = Config.GRID
    n_atoms: float = 1.0e5
    rabi_hz: Optional[float] = None
    delta_b_mg: float = 0.0
    anti_trap: bool = True
    sudden_release: bool = False

    method: str = "split-step"
    rtol: float = 1.0e-5
    atol: float = 1.0e-8
    max_step_us: float = 50.0
    sample_interval_ms: float = 0.5
    snapshot_times_ms: List[float] = [0.0, 90.0, 140.0]
    regrid_times_ms: List[float] = [95.0]
    regrid_keep_spacing: bool = True
    absorber_onset: float = 0.15
    absorber_strength_hz: float = 5.0e3
    absorbed_levels: List[int] = list(LEVELS)
    interactions: bool = True

    ground_tol: float = 1.0e-10
    fidelity_form: str = "amplitude"
    output_dir: str = Config.OUTPUT_DIR

    class Config:
        extra = "forbid"

    @validator("n_atoms")
    def _positive_atoms(cls, value):
        if not value > 0:
            raise ValueError("n_atoms must be positive")
        return value

    @validator("rabi_hz")
    def _non_negative_rabi(cls, value):
        if value is not None and value < 0:
            raise ValueError("rabi_hz must be non-negative")
        return value

    @validator("rtol", "atol", "max_step_us", "sample_interval_ms", "ground_tol")
    def _positive(cls, value, field):
        if not value > 0:
            raise ValueError(f"{field.name} must be positive")
        return value

    @validator("method")
    def _known_method(cls, value):
        if value not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        return value

    @validator("grid")
    def _known_grid(cls, value):
        if value not in GRID_PRESETS:
            raise ValueError(f"grid must be one of {sorted(GRID_PRESETS)}")
        return value

    @validator("fidelity_form")
    def _known_form(cls, value):
        if value not in FIDELITY_FORMS:
            raise ValueError(f"fidelity_form must be one of {FIDELITY_FORMS}")
        return value

    @validator("absorbed_levels")
    def _levels(cls, value):
        if any(level not in LEVELS for level in value):
            raise ValueError(f"absorbed_levels must be drawn from {LEVELS}")
        return value

    # resolution to SI objects
    def load_species(self) -> SpeciesConstants:
        return load_species(self.species)

    def build_schedule(self, species: Optional[SpeciesConstants] = None) -> FieldSchedule:
        species = species or self.load_species()
        schedule = load_sequence(self.sequence, species)
        if self.rabi_hz is not None:
            schedule = schedule.with_rabi(hz_to_rad(self.rabi_hz))
        schedule = schedule.with_field_offset(mg_to_tesla(self.delta_b_mg)).with_anti_trap(self.anti_trap)
        return sudden_release(schedule) if self.sudden_release else schedule

    def build_grid(self) -> Grid:
        return grid_preset(self.grid)

    def propagator_config(self, species: SpeciesConstants, expected_velocity: Optional[float] = None,
                          progress: bool = False) -> PropagatorConfig:
        return PropagatorConfig(
            method=self.method,
            rtol=self.rtol,
            atol=self.atol,
            max_step=self.max_step_us * 1e-6,
            initial_step=min(1e-5, self.max_step_us * 1e-6),
            sample_interval=ms_to_s(self.sample_interval_ms),
            snapshot_times=tuple(ms_to_s(t) for t in self.snapshot_times_ms),
            absorber=AbsorbingLayer(
                onset_fraction=self.absorber_onset,
                strength=species.hbar * hz_to_rad(self.absorber_strength_hz),
            ),
            absorbed_levels=tuple(self.absorbed_levels),
            interactions=self.interactions,
            regrid_times=tuple(ms_to_s(t) for t in self.regrid_times_ms),
            regrid_factor=2,
            regrid_keep_spacing=self.regrid_keep_spacing,
            expected_velocity=expected_velocity,
            progress=progress,
        )

    def with_overrides(self, **overrides) -> "RunConfig":
        unknown = set(overrides) - set(self.__fields__)
        if unknown:
            raise ConfigError(f"Unknown run parameters: {sorted(unknown)}")
        data = self.dict()
        data.update(overrides)
        return parse_run_config(data)

    def resolved(self) -> Dict[str, Any]:
        """Manifest record with every preset expanded inline."""
        species = self.load_species()
        schedule = self.build_schedule(species)
        return {
            "run": json.loads(self.json()),
            "species": json.loads(species.json()),
            "sequence": json.loads(schedule_to_file_model(schedule).json()),
            "field_offset_mg": self.delta_b_mg,
            "anti_trap": schedule.anti_trap,
            "grid": self.build_grid().describe(),
        }


def parse_run_config(data: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.parse_obj(data)
    except ValueError as exc:
        raise ConfigError(f"Invalid run configuration: {exc}")


def sudden_release_defaults() -> Dict[str, Any]:
    """Release-run overrides: earlier window expansions at fixed point count."""
    return {
        "name": "sudden-release",
        "sudden_release": True,
        "snapshot_times_ms": [0.0, 140.0],
        "regrid_times_ms": [30.0, 80.0],
        "regrid_keep_spacing": False,
    }


def load_run_config(source: Union[str, Path, None] = None, **overrides) -> RunConfig:
    """Parse a run file (path or name under data/configs); no source gives the defaults."""
    data: Dict[str, Any] = {}
    if source:
        path = Path(source)
        if not path.suffix:
            path = Config.CONFIG_DIR / f"{source}.json"
        if not path.exists():
            raise ConfigError(f"Run configuration not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"Malformed run configuration {path}: {exc}")
        if not isinstance(data, dict):
            raise ConfigError(f"Run configuration {path} must be a JSON object")
        data.pop("comment", None)
    data.update({k: v for k, v in overrides.items() if v is not None})
    return parse_run_config(data)
