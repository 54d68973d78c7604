"""Desk-scale reproductions of the reference runs; enable with --runslow."""
import numpy as np
import pytest

from config import Config
from dynamics import DOPRI5, SPLIT_STEP, final_fractions
from run_config import load_run_config
from scan_manifest import STATUS_COMPLETE
from scanner import (ScanSpec, expected_oscillation_period, fidelity_ordering, run_scan, scan_preset,
                     stripe_period)
from simulation import LaserSimulation

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def model_sequence(tmp_path_factory):
    run = load_run_config(output_dir=str(tmp_path_factory.mktemp("runs")))
    return LaserSimulation(run).execute()


@pytest.fixture(scope="module")
def release(tmp_path_factory):
    run = load_run_config("sudden-release", output_dir=str(tmp_path_factory.mktemp("runs")))
    return LaserSimulation(run).execute()


def test_desk_ground_state(tmp_path):
    simulation = LaserSimulation(load_run_config(output_dir=str(tmp_path)))
    ground = simulation.solve_ground_state()
    mu_hz = ground.mu / (2 * np.pi * simulation.species.hbar)
    assert ground.converged
    assert mu_hz == pytest.approx(318.0, rel=0.02)
    assert abs(ground.virial) < 1e-2


def test_model_sequence_fractions(model_sequence):
    fractions = model_sequence["fractions"]
    assert fractions["0"] == pytest.approx(0.71, abs=0.05)
    assert model_sequence["absorbed_fraction"] + fractions["p1"] == pytest.approx(0.26, abs=0.05)


def test_model_sequence_main_peak(model_sequence):
    row = model_sequence["row"]
    assert row["outcoupled_fraction"] == pytest.approx(0.65, abs=0.05)
    assert row["v_mean_um_s"] == pytest.approx(410.0, abs=40.0)
    assert row["fidelity"] == pytest.approx(0.961, abs=0.02)
    assert row["sigma_vx_um_s"] == pytest.approx(113.0, rel=0.2)
    assert row["sigma_vz_um_s"] == pytest.approx(67.0, rel=0.2)


def test_sudden_release_main_peak(release):
    row = release["row"]
    assert row["component"] == "m1"
    assert row["v_mean_um_s"] == pytest.approx(864.0, abs=80.0)
    assert row["fidelity"] == pytest.approx(0.842, abs=0.03)
    assert row["outcoupled_fraction"] == pytest.approx(0.99945, rel=0.005)


def _scan(tmp_path, name, axes, **baseline):
    spec = ScanSpec(name=name, axes=axes, baseline=baseline, output_dir=str(tmp_path),
                    parallelism=Config.threads())
    table = run_scan(spec, progress=False).table
    assert (table["status"] == STATUS_COMPLETE).all()
    return table


def test_anti_trap_fidelity_orderings(tmp_path):
    spec = scan_preset("fig6-desk").copy(update={"output_dir": str(tmp_path), "parallelism": Config.threads()})
    orderings = fidelity_ordering(run_scan(spec, progress=False).table)
    assert all(holds is True for holds in orderings.values()), orderings


def test_outcoupling_shuts_down_at_weak_coupling(tmp_path):
    table = _scan(tmp_path, "weak-coupling", [{"name": "rabi_hz", "values": [2.0, 10.0, 40.0]}])
    fractions = table.sort_values("rabi_hz")["fraction_0"].to_numpy()
    assert fractions[0] < 0.05
    assert np.all(np.diff(fractions) > 0)


def test_strong_coupling_stripe_period(tmp_path):
    rabi = [160.0 + 2.5 * i for i in range(33)]
    table = _scan(tmp_path, "stripes", [{"name": "rabi_hz", "values": rabi}]).sort_values("rabi_hz")
    period = stripe_period(table["rabi_hz"], table["outcoupled_fraction"])
    assert period == pytest.approx(expected_oscillation_period(0.09), rel=0.3)


def test_field_offset_moves_the_resonance_off_the_cloud(tmp_path):
    table = _scan(tmp_path, "field-offset", [{"name": "delta_b_mg", "values": [-1.0, -0.1, 0.0, 0.1, 1.0]}],
                  rabi_hz=90.0).set_index("delta_b_mg")
    assert table.loc[-1.0, "fraction_0"] < 0.05
    assert table.loc[1.0, "fraction_0"] < 0.05
    for offset in (-0.1, 0.1):
        assert table.loc[offset, "fidelity"] == pytest.approx(table.loc[0.0, "fidelity"], abs=0.05)
        assert table.loc[offset, "outcoupled_fraction"] == pytest.approx(table.loc[0.0, "outcoupled_fraction"],
                                                                         abs=0.1)


@pytest.fixture(scope="module")
def coarse_ground(tmp_path_factory):
    run = load_run_config(grid="coarse-reduced", output_dir=str(tmp_path_factory.mktemp("runs")))
    return LaserSimulation(run).solve_ground_state()


def _coarse(tmp_path, **overrides):
    return LaserSimulation(load_run_config(grid="coarse-reduced", output_dir=str(tmp_path), **overrides))


def test_full_sequence_conserves_norm_without_absorbers(tmp_path, coarse_ground):
    simulation = _coarse(tmp_path, absorbed_levels=[], regrid_times_ms=[])
    trajectory = simulation.propagate(coarse_ground)
    totals = np.sum(np.asarray(trajectory.norms), axis=1)
    assert trajectory.times[-1] == pytest.approx(0.14)
    assert np.max(np.abs(totals / totals[0] - 1.0)) < 1e-6


def test_split_step_and_dormand_prince_agree_on_the_model_sequence(tmp_path, coarse_ground):
    finals = {}
    for method in (SPLIT_STEP, DOPRI5):
        trajectory = _coarse(tmp_path / method, method=method).propagate(coarse_ground)
        finals[method] = final_fractions(trajectory)["0"]
    assert finals[SPLIT_STEP] == pytest.approx(finals[DOPRI5], abs=0.005)
