import json

import numpy as np
import pandas as pd
import pytest

from errors import CheckFailure
from run_config import load_run_config
from simulation import MANIFEST, PARTICLE_NUMBERS, REPORT, LaserSimulation

SHORT_SEQUENCE = {
    "name": "short-hold",
    "t_max_ms": 2.0,
    "omega_hz": [30.0, 30.0, 15.0],
    "b_bot_g": 4.0,
    "rf": {"rabi_hz": [[0.0, 90.0]], "detuning_hz": [[0.0, 319.0]], "omega0_hz": None,
           "t_on_ms": 0.0, "t_off_ms": 2.0},
    "phases": [{"name": "hold", "t_start_ms": 0.0, "t_end_ms": 2.0, "b_bot_g": [4.0, 4.0]}],
}


@pytest.fixture
def short_run(tmp_path):
    sequence = tmp_path / "short-hold.json"
    sequence.write_text(json.dumps(SHORT_SEQUENCE))
    return load_run_config(None, name="short", sequence=str(sequence), grid="coarse-reduced",
                           snapshot_times_ms=[0.0, 2.0], regrid_times_ms=[], ground_tol=1e-8,
                           output_dir=str(tmp_path / "runs"))


def test_preflight_report_of_the_default_run():
    report = LaserSimulation(load_run_config()).check()
    assert report.passed
    assert {c.name for c in report.checks} == {"sharp_resonance", "state_selectivity",
                                               "grid_nyquist", "rotating_wave"}
    assert report.info["mu_tf_hz"] == pytest.approx(315.1, rel=0.01)
    assert len(report.info["resonance_radii_um"]) == 3
    assert report.info["expected_velocity_um_s"] == pytest.approx(1710.0, rel=0.02)


def test_sudden_release_has_no_resonance_shell():
    simulation = LaserSimulation(load_run_config("sudden-release"))
    report = simulation.check()
    assert report.info["resonance_radii_um"] is None
    assert simulation.analysis_level == -1


def test_failed_checks_stop_the_run(short_run):
    simulation = LaserSimulation(short_run)
    with pytest.raises(CheckFailure):
        simulation.execute()
    manifest = json.loads((simulation.output_dir / MANIFEST).read_text())
    assert manifest["status"] == "check-failed"
    assert manifest["config"]["sequence"]["name"] == "short-hold"


def test_short_run_writes_every_artifact(short_run):
    simulation = LaserSimulation(short_run)
    summary = simulation.execute(force=True)
    out = simulation.output_dir

    manifest = json.loads((out / MANIFEST).read_text())
    assert manifest["status"] == "complete"
    assert manifest["wall_time_s"] > 0

    numbers = pd.read_csv(out / PARTICLE_NUMBERS)
    assert list(numbers.columns[:4]) == ["t_ms", "N_m1", "N_0", "N_p1"]
    assert numbers["N_m1"].iloc[0] == pytest.approx(1e5, rel=1e-6)
    assert numbers["N_0"].iloc[-1] > 0
    total = numbers[["N_m1", "N_0", "N_p1"]].sum(axis=1)
    assert np.all(np.diff(total) <= 1e-6 * 1e5)

    for name in ("ground_state.snap", "spinor_t0000.00ms.snap", "spinor_t0002.00ms.snap"):
        assert (out / "snapshots" / name).exists()
    for name in ("final_axis_cuts.csv", "final_density_slice.csv", "velocity_plane.csv",
                 "particle_numbers.html", "velocity_plane.html"):
        assert (out / name).exists()

    report = json.loads((out / REPORT).read_text())
    assert report["mu_hz"] == pytest.approx(summary["mu_hz"])
    assert summary["ground_state"]["converged"]
    assert sum(summary["fractions"].values()) == pytest.approx(1.0, abs=1e-3)
    assert summary["row"]["component"] == "0"
    assert summary["release_energy_hz"] is not None
