import json

from scan_manifest import (STATUS_COMPLETE, STATUS_FAILED, STATUS_PENDING, ScanManifest,
                           canonical_key)


def test_canonical_key_ignores_order():
    assert canonical_key({"n_atoms": 1e5, "rabi_hz": 90.0}) == canonical_key({"rabi_hz": 90.0, "n_atoms": 1e5})
    assert canonical_key({"rabi_hz": 90.0}) != canonical_key({"rabi_hz": 91.0})


def test_record_and_update(tmp_path):
    manifest = ScanManifest(tmp_path / "scan" / "scan_manifest.db")
    params = {"rabi_hz": 40.0, "n_atoms": 1e5}
    manifest.record(params, "run-0000", STATUS_PENDING)
    assert manifest.status_of(params) == STATUS_PENDING
    assert not manifest.is_complete(params)

    manifest.record({"n_atoms": 1e5, "rabi_hz": 40.0}, "run-0000", STATUS_COMPLETE,
                    metrics={"fidelity": 0.93}, wall_time=12.5)
    assert manifest.is_complete(params)
    rows = manifest.rows()
    assert len(rows) == 1
    assert rows[0]["metrics"] == {"fidelity": 0.93}
    assert rows[0]["params"] == params
    assert rows[0]["wall_time"] == 12.5
    manifest.close()


def test_counts_and_filter(tmp_path):
    manifest = ScanManifest(tmp_path / "m.db")
    manifest.record({"rabi_hz": 40.0}, "run-0000", STATUS_COMPLETE, metrics={})
    manifest.record({"rabi_hz": 90.0}, "run-0001", STATUS_FAILED, error="NonFiniteState: boom")
    manifest.record({"rabi_hz": 150.0}, "run-0002", STATUS_COMPLETE, metrics={"n_mp": 1.0})
    assert manifest.counts() == {STATUS_COMPLETE: 2, STATUS_FAILED: 1}
    failed = manifest.rows(STATUS_FAILED)
    assert [r["run_id"] for r in failed] == ["run-0001"]
    assert failed[0]["error"].startswith("NonFiniteState")
    assert manifest.status_of({"rabi_hz": 250.0}) is None
    manifest.close()


def test_manifest_survives_reopening(tmp_path):
    path = tmp_path / "m.db"
    manifest = ScanManifest(path)
    manifest.set_spec(json.dumps({"name": "demo"}))
    manifest.record({"rabi_hz": 40.0}, "run-0000", STATUS_COMPLETE, metrics={"fidelity": 0.5})
    manifest.close()

    reopened = ScanManifest(path)
    assert json.loads(reopened.get_spec()) == {"name": "demo"}
    assert reopened.is_complete({"rabi_hz": 40.0})
    reopened.close()
