"""One complete run: preflight checks, ground state, propagation, analysis, artifacts."""
import json
import logging
import platform
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
import scipy

from analysis import (AnalysisReport, metrics, predicted_release_energy, report_to_row,
                      restricted_momentum_density, velocity_plane)
from config import VERSION, Config
from dynamics import SpinorState, Trajectory, final_fractions, propagate
from errors import CheckFailure
from fieldmodel import resonance_radii
from groundstate import GroundStateResult, solve_ground_state, thomas_fermi_mu
from plots import density_figure, particle_number_figure, velocity_plane_frame, write_html
from run_config import RunConfig
from snapshots import export_axis_cuts, export_slice, write_snapshot
from zeeman import (LEVEL_NAMES, LEVELS, CheckResult, anti_trap_ratio, chemical_potential_field,
                    sharp_resonance_check, state_selectivity_check)

logger = logging.getLogger(__name__)

MANIFEST = "run_manifest.json"
PARTICLE_NUMBERS = "particle_numbers.csv"
REPORT = "report.json"


@dataclass
class CheckReport:
    checks: List[CheckResult]
    info: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> List[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def to_dict(self):
        return {"passed": self.passed, "checks": [c.to_dict() for c in self.checks], "info": self.info}


def json_default(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.bool_):
        return bool(value)
    raise TypeError(f"Not JSON serializable: {type(value)}")


def write_json(path: Path, data) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, default=json_default, allow_nan=True))
    return path


class LaserSimulation:
    """Orchestrates one run of the rf outcoupling model (or the sudden-release reference)."""

    def __init__(self, run: RunConfig, output_dir: Optional[Path] = None, progress: bool = False):
        Config.validate()
        self.run = run
        self.species = run.load_species()
        self.trap_schedule = run.copy(update={"sudden_release": False}).build_schedule(self.species)
        self.schedule = run.build_schedule(self.species)
        self.grid = run.build_grid()
        self.output_dir = Path(output_dir) if output_dir is not None else Path(run.output_dir) / run.name
        self.progress = progress
        self.analysis_level = -1 if run.sudden_release else 0

    # preflight
    def check(self) -> CheckReport:
        sp = self.species
        schedule = self.trap_schedule
        mu = thomas_fermi_mu(self.run.n_atoms, schedule.trap_omegas(0.0), sp)
        b_bot = schedule.b_bot(0.0)
        rf_on = schedule.rf.t_off > schedule.rf.t_on and not self.run.sudden_release
        rabi = max(schedule.rf.rabi.values) if rf_on else 0.0
        velocity = np.sqrt(2.0 * mu / sp.mass_kg)
        needed = sp.mass_kg * velocity / sp.hbar
        nyquist = self.grid.nyquist_momentum() / needed if needed > 0 else float("inf")
        rwa = schedule.rwa_ratio()
        checks = [
            sharp_resonance_check(mu, rabi, sp),
            state_selectivity_check(b_bot, mu, sp),
            CheckResult("grid_nyquist", nyquist >= Config.NYQUIST_SAFETY, nyquist,
                        self.grid.nyquist_momentum(), needed, Config.NYQUIST_SAFETY, "1/m"),
            CheckResult("rotating_wave", rwa >= Config.RWA_MIN_RATIO, rwa,
                        abs(schedule.rf.omega0), abs(max(schedule.rf.detuning.values, key=abs)),
                        Config.RWA_MIN_RATIO, "rad/s"),
        ]
        tf_radii = np.sqrt(2.0 * mu / (sp.mass_kg * schedule.trap_omegas(0.0) ** 2))
        info = {
            "mu_tf_hz": mu / (2 * np.pi * sp.hbar),
            "anti_trap_ratio": anti_trap_ratio(b_bot, sp),
            "chemical_potential_field_mg": chemical_potential_field(mu, sp) / 1e-7,
            "thomas_fermi_radii_um": (tf_radii * 1e6).tolist(),
            "resonance_radii_um": (resonance_radii(schedule, 0.0) * 1e6).tolist() if rf_on else None,
            "expected_velocity_um_s": velocity * 1e6,
            "grid": repr(self.grid),
            "field_offset_mg": self.run.delta_b_mg,
        }
        return CheckReport(checks, info)

    # stages
    def solve_ground_state(self, progress: Optional[bool] = None) -> GroundStateResult:
        return solve_ground_state(self.trap_schedule, self.run.n_atoms, self.grid, tol=self.run.ground_tol,
                                  progress=self.progress if progress is None else progress)

    def propagate(self, ground: GroundStateResult) -> Trajectory:
        config = self.run.propagator_config(self.species, progress=self.progress)
        return propagate(SpinorState.from_ground_state(ground, self.grid), self.schedule, config)

    def analyze(self, trajectory: Trajectory, ground: GroundStateResult) -> AnalysisReport:
        final = trajectory.final
        norms = {LEVEL_NAMES[level]: float(n) for level, n in zip(LEVELS, final.norms)}
        report = metrics(final.component(self.analysis_level), final.grid, species=self.species,
                         n_total=self.run.n_atoms, component=LEVEL_NAMES[self.analysis_level],
                         fidelity_form=self.run.fidelity_form, component_norms=norms)
        if not self.run.sudden_release:
            report.release_energy = predicted_release_energy(self.schedule, ground.mu, 0.0)
        return report

    # artifacts
    def manifest(self, status: str, wall_time: Optional[float] = None, error: Optional[str] = None):
        return {
            "status": status,
            "created": datetime.now(timezone.utc).isoformat(),
            "version": VERSION,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pandas": pd.__version__,
            "fft_workers": Config.fft_workers(),
            "wall_time_s": wall_time,
            "error": error,
            "config": self.run.resolved(),
        }

    def write_manifest(self, status: str, **kwargs) -> Path:
        return write_json(self.output_dir / MANIFEST, self.manifest(status, **kwargs))

    def write_artifacts(self, ground: GroundStateResult, trajectory: Trajectory,
                        report: AnalysisReport, checks: CheckReport) -> Dict[str, Any]:
        out = self.output_dir
        snapshots = out / "snapshots"
        write_snapshot(snapshots / "ground_state.snap", ground.psi, self.grid, 0.0, "m1",
                       metadata={"mu_joule": ground.mu})
        for snap in trajectory.snapshots:
            write_snapshot(snapshots / f"spinor_t{snap.t * 1e3:07.2f}ms.snap", snap.psi, snap.grid,
                           snap.t, "spinor", metadata={"phase": snap.phase, "order": list(LEVELS)})

        numbers = trajectory.to_dataframe()
        numbers.to_csv(out / PARTICLE_NUMBERS, index=False)
        write_html(particle_number_figure(numbers, f"Particle numbers: {self.run.name}"),
                   out / "particle_numbers.html")

        final = trajectory.final
        psi = final.component(self.analysis_level)
        export_axis_cuts(out / "final_axis_cuts.csv", psi, final.grid)
        export_slice(out / "final_density_slice.csv", psi, final.grid)
        distribution = restricted_momentum_density(psi, final.grid, report.region, self.species)
        plane = velocity_plane_frame(*velocity_plane(distribution, "density"))
        plane.to_csv(out / "velocity_plane.csv")
        write_html(density_figure(plane, "Main-peak velocity density (v_y = 0)"), out / "velocity_plane.html")

        fractions = final_fractions(trajectory)
        summary = {
            "name": self.run.name,
            "check": checks.to_dict(),
            "ground_state": ground.to_dict(),
            "mu_hz": ground.mu / (2 * np.pi * self.species.hbar),
            "fractions": fractions,
            "absorbed_fraction": 1.0 - sum(fractions.values()),
            "analysis": report.to_dict(),
            "row": report_to_row(report),
            "release_energy_hz": (report.release_energy / (2 * np.pi * self.species.hbar)
                                  if report.release_energy is not None else None),
            "steps": {"accepted": trajectory.accepted, "rejected": trajectory.rejected},
        }
        write_json(out / REPORT, summary)
        return summary

    def execute(self, dry_run: bool = False, force: bool = False) -> Dict[str, Any]:
        """check → ground state → propagate → metrics; returns the report summary."""
        start = time.time()
        checks = self.check()
        for failure in checks.failures:
            logger.warning("check %s failed: ratio %.3g < %.3g", failure.name, failure.ratio, failure.threshold)
        if not checks.passed and not force:
            self.write_manifest("check-failed")
            raise CheckFailure(f"Preflight checks failed: {[c.name for c in checks.failures]}", checks)
        if dry_run:
            self.write_manifest("dry-run")
            return {"name": self.run.name, "check": checks.to_dict(), "dry_run": True}

        self.write_manifest("running")
        try:
            ground = self.solve_ground_state()
            trajectory = self.propagate(ground)
            report = self.analyze(trajectory, ground)
            summary = self.write_artifacts(ground, trajectory, report, checks)
        except Exception as exc:
            self.write_manifest("failed", wall_time=time.time() - start,
                                error=f"{type(exc).__name__}: {exc}")
            raise
        wall = time.time() - start
        summary["wall_time_s"] = wall
        self.write_manifest("complete", wall_time=wall)
        return summary
