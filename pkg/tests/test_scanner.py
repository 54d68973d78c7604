import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

import scanner
from errors import ConfigError, DomainError
from scan_manifest import STATUS_COMPLETE, STATUS_FAILED
from scanner import (PRESET_ALIASES, ScanSpec, expected_oscillation_period, fidelity_ordering, load_scan_spec,
                     parse_scan_spec, preset_scans, run_scan, scan_preset, stripe_period)
from simulation import PARTICLE_NUMBERS


def _spec(tmp_path, **kwargs):
    data = dict(
        name="demo",
        axes=[{"name": "rabi_hz", "values": [40.0, 90.0, 150.0]},
              {"name": "anti_trap", "values": [True, False]}],
        baseline_config="coarse",
        output_dir=str(tmp_path),
    )
    data.update(kwargs)
    return parse_scan_spec(data)


def _fake_run(calls):
    def execute(baseline, params, run_id, run_dir):
        calls.append(run_id)
        if params.get("rabi_hz") == 90.0 and params.get("anti_trap") is False:
            return params, run_id, STATUS_FAILED, None, "NonFiniteState: boom", 0.1
        directory = Path(run_dir)
        directory.mkdir(parents=True, exist_ok=True)
        pd.DataFrame({"t_ms": [0.0, 0.5, 1.0], "N_m1": [1e5, 9e4, 8e4],
                      "N_0": [0.0, 1e4, 2e4], "N_p1": [0.0, 0.0, 0.0]}).to_csv(directory / PARTICLE_NUMBERS, index=False)
        fidelity = params["rabi_hz"] / 100.0 + (0.01 if params.get("anti_trap") is False else 0.0)
        metrics = {"fidelity": fidelity, "outcoupled_fraction": 0.5, "v_mean_um_s": 400.0}
        return params, run_id, STATUS_COMPLETE, metrics, None, 0.2
    return execute


@pytest.mark.parametrize("data", [
    {"name": "x", "axes": [{"name": "temperature", "values": [1.0]}]},
    {"name": "x", "axes": [{"name": "rabi_hz", "values": []}]},
    {"name": "x", "axes": [{"name": "rabi_hz", "values": [float("nan")]}]},
    {"name": "x", "axes": [{"name": "rabi_hz", "values": [1.0]}, {"name": "rabi_hz", "values": [2.0]}]},
    {"name": "x", "axes": []},
    {"name": "x", "axes": [{"name": "rabi_hz", "values": [1.0]}], "parallelism": 0},
])
def test_invalid_scan_specs(data):
    with pytest.raises(ConfigError):
        parse_scan_spec(data)


def test_tuples_are_the_cartesian_product(tmp_path):
    spec = _spec(tmp_path)
    assert spec.run_count == 6
    tuples = spec.tuples()
    assert len(tuples) == 6
    assert tuples[0] == {"rabi_hz": 40.0, "anti_trap": True}
    assert tuples[-1] == {"rabi_hz": 150.0, "anti_trap": False}


def test_scan_spec_file(tmp_path):
    path = tmp_path / "scan.json"
    path.write_text(json.dumps({"name": "file-scan", "axes": [{"name": "n_atoms", "values": [5e4, 1e5]}],
                                "parallelism": 2}))
    spec = load_scan_spec(path)
    assert spec.name == "file-scan"
    assert spec.parallelism == 2
    with pytest.raises(ConfigError):
        load_scan_spec(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ConfigError):
        load_scan_spec(bad)


def test_anti_trap_preset():
    spec = scan_preset("anti-trap-desk")
    assert spec.axes[0].values == [40.0, 90.0, 150.0]
    assert spec.axes[1].values == [True, False]
    assert spec.run_count == 6
    assert scan_preset("anti-trap-full").baseline == {"rtol": 1e-6}


def test_rabi_atoms_presets():
    desk = scan_preset("rabi-atoms-desk")
    full = scan_preset("rabi-atoms-full")
    assert desk.run_count <= 200
    rabi = full.axes[0].values
    assert rabi[1] - rabi[0] == pytest.approx(2.5)
    assert rabi[0] == 0.0 and rabi[-1] == 300.0
    assert full.run_count > 1000


def test_field_offset_presets():
    desk = scan_preset("field-offset-desk")
    delta_b = desk.axes[0].values
    assert 0.0 in delta_b
    assert min(delta_b) == -1.0 and max(delta_b) == 1.0
    assert len(delta_b) == 11
    atoms = scan_preset("field-offset-atoms-desk")
    assert atoms.baseline == {"rabi_hz": 90.0}
    assert atoms.axes[1].values == [5e4, 1e5, 1.5e5]
    assert len(scan_preset("field-offset-full").axes[0].values) == 101


def test_outcoupling_curves_preset():
    spec = scan_preset("outcoupling-curves")
    assert spec.collect_time_series
    assert spec.axes[0].values == [40.0, 90.0, 150.0, 250.0, 255.0]


def test_every_preset_is_valid():
    for name, spec in preset_scans().items():
        assert spec.name == name
        assert spec.run_count >= 1
    with pytest.raises(ConfigError):
        scan_preset("everything")


def test_reference_preset_names_are_aliases():
    assert scan_preset("fig6-desk").axes == scan_preset("anti-trap-desk").axes
    assert scan_preset("fig9-desk").axes == scan_preset("field-offset-desk").axes
    for alias, target in PRESET_ALIASES.items():
        spec = scan_preset(alias)
        assert spec.name == alias
        assert spec.run_count == scan_preset(target).run_count
        assert spec.baseline == scan_preset(target).baseline


def test_expected_oscillation_period():
    assert expected_oscillation_period(0.09) == pytest.approx(11.11, rel=1e-3)
    assert expected_oscillation_period(0.045) == pytest.approx(22.22, rel=1e-3)
    with pytest.raises(DomainError):
        expected_oscillation_period(0.0)


def test_stripe_period_of_a_synthetic_scan():
    rabi = np.arange(0.0, 300.0, 2.5)
    fractions = 0.2 + 0.001 * rabi + 0.1 * np.cos(2 * np.pi * rabi / 11.11)
    assert stripe_period(rabi, fractions) == pytest.approx(11.11, rel=0.05)
    shuffled = np.random.default_rng(0).permutation(len(rabi))
    assert stripe_period(rabi[shuffled], fractions[shuffled]) == pytest.approx(11.11, rel=0.05)


def test_stripe_period_degenerate_inputs():
    assert np.isnan(stripe_period([0.0, 1.0, 2.0], [0.1, 0.2, 0.1]))
    with pytest.raises(DomainError):
        stripe_period([0.0, 1.0, 3.0, 4.0, 5.0], [0.0, 1.0, 0.0, 1.0, 0.0])


def test_failed_worker_run_is_reported_not_raised(tmp_path):
    params, run_id, status, metrics, error, _ = scanner._execute_run(
        {}, {"grid": "no-such-grid"}, "run-0000", str(tmp_path / "run-0000"))
    assert status == STATUS_FAILED
    assert metrics is None
    assert error.startswith("ConfigError")


def test_run_scan_keeps_failures_and_writes_tables(tmp_path, monkeypatch):
    calls = []
    monkeypatch.setattr(scanner, "_execute_run", _fake_run(calls))
    result = run_scan(_spec(tmp_path), progress=False)

    assert len(calls) == 6
    assert result.directory == tmp_path / "demo"
    assert result.counts == {STATUS_COMPLETE: 5, STATUS_FAILED: 1}
    table = result.table
    assert len(table) == 6
    failed = table[table["status"] == STATUS_FAILED]
    assert failed["run_id"].tolist() == ["run-0003"]
    assert failed["error"].iloc[0] == "NonFiniteState: boom"

    written = pd.read_csv(result.files["results"])
    assert len(written) == 6
    heatmap = pd.read_csv(result.files["heatmap_fidelity"], index_col=0).dropna(how="all")
    assert heatmap.shape == (3, 2)
    assert (tmp_path / "demo" / "heatmap_fidelity.html").exists()
    assert "n0_vs_time" not in result.files


def test_resume_skips_completed_runs(tmp_path, monkeypatch):
    calls = []
    monkeypatch.setattr(scanner, "_execute_run", _fake_run(calls))
    run_scan(_spec(tmp_path), progress=False)
    calls.clear()
    run_scan(_spec(tmp_path), progress=False)
    assert calls == ["run-0003"]
    calls.clear()
    run_scan(_spec(tmp_path, resume=False), progress=False)
    assert len(calls) == 6


def test_time_series_collection(tmp_path, monkeypatch):
    monkeypatch.setattr(scanner, "_execute_run", _fake_run([]))
    spec = _spec(tmp_path, name="curves", axes=[{"name": "rabi_hz", "values": [40.0, 150.0]}],
                 collect_time_series=True)
    result = run_scan(spec, progress=False)
    series = pd.read_csv(result.files["n0_vs_time"])
    assert len(series) == 6
    assert set(series["rabi_hz"]) == {40.0, 150.0}
    assert not any(key.startswith("heatmap") for key in result.files)


def test_fidelity_ordering(tmp_path, monkeypatch):
    monkeypatch.setattr(scanner, "_execute_run", _fake_run([]))
    ordering = fidelity_ordering(run_scan(_spec(tmp_path), progress=False).table)
    assert ordering["F(90) > F(40)"] is True
    assert ordering["F(90) > F(150)"] is False
    assert ordering["no anti-trap >= anti-trap at 40 Hz"] is True
    assert ordering["no anti-trap >= anti-trap at 90 Hz"] is None


def test_scan_spec_round_trips_through_json(tmp_path):
    spec = _spec(tmp_path)
    assert ScanSpec.parse_raw(spec.json()) == spec
