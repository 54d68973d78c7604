"""Parameter sweeps over particle number, Rabi frequency and field offset.

Every tuple of the Cartesian product of the scan axes runs the same sequence
through LaserSimulation in its own directory. Progress lives in an SQLite
manifest so interrupted scans resume where they stopped; failed runs stay in
the table with their error.
"""
import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, validator
from tqdm import tqdm

from config import Config
from errors import ConfigError, DomainError
from plots import curves_figure, heatmap_figure, write_html
from run_config import OVERRIDABLE, load_run_config, parse_run_config
from scan_manifest import (MANIFEST_NAME, STATUS_COMPLETE, STATUS_FAILED, ScanManifest,
                           canonical_key)
from simulation import PARTICLE_NUMBERS, LaserSimulation, json_default

logger = logging.getLogger(__name__)

HEATMAP_METRICS = ("outcoupled_fraction", "v_mean_um_s", "fidelity")


class ScanAxis(BaseModel):
    name: str
    values: List[Any]

    @validator("name")
    def _registered(cls, value):
        if value not in OVERRIDABLE:
            raise ValueError(f"scan parameter {value!r} is not one of {OVERRIDABLE}")
        return value

    @validator("values")
    def _finite(cls, value):
        if not value:
            raise ValueError("scan axis needs at least one value")
        for v in value:
            if isinstance(v, float) and not math.isfinite(v):
                raise ValueError(f"scan values must be finite, got {v}")
        return value


class ScanSpec(BaseModel):
    name: str
    axes: List[ScanAxis]
    baseline: Dict[str, Any] = {}
    baseline_config: Optional[str] = None
    output_dir: Optional[str] = None
    parallelism: int = 1
    resume: bool = True
    collect_time_series: bool = False

    @validator("axes")
    def _non_empty(cls, value):
        if not value:
            raise ValueError("scan needs at least one axis")
        names = [a.name for a in value]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate scan axes: {names}")
        return value

    @validator("parallelism")
    def _positive(cls, value):
        if value < 1:
            raise ValueError("parallelism must be >= 1")
        return value

    def tuples(self) -> List[Dict[str, Any]]:
        names = [a.name for a in self.axes]
        return [dict(zip(names, combo)) for combo in itertools.product(*(a.values for a in self.axes))]

    @property
    def run_count(self) -> int:
        return int(np.prod([len(a.values) for a in self.axes]))


@dataclass
class ScanResult:
    table: pd.DataFrame
    directory: Path
    counts: Dict[str, int] = field(default_factory=dict)
    files: Dict[str, Path] = field(default_factory=dict)


def parse_scan_spec(data: Dict[str, Any]) -> ScanSpec:
    try:
        return ScanSpec.parse_obj(data)
    except ValueError as exc:
        raise ConfigError(f"Invalid scan specification: {exc}")


def load_scan_spec(path) -> ScanSpec:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Scan specification not found: {path}")
    try:
        return ScanSpec.parse_raw(path.read_text())
    except ValueError as exc:
        raise ConfigError(f"Invalid scan specification {path}: {exc}")


def _desk_delta_b():
    magnitudes = [0.01, 0.03, 0.1, 0.3, 1.0]
    return [-m for m in reversed(magnitudes)] + [0.0] + magnitudes


PRESET_ALIASES = {
    "fig6-desk": "anti-trap-desk",
    "fig6-full": "anti-trap-full",
    "fig7-desk": "rabi-atoms-desk",
    "fig7-full": "rabi-atoms-full",
    "fig8": "outcoupling-curves",
    "fig9-desk": "field-offset-desk",
    "fig9-full": "field-offset-full",
    "fig9b-desk": "field-offset-atoms-desk",
    "fig9b-full": "field-offset-atoms-full",
}


def _frange(start, stop, step):
    count = int(round((stop - start) / step)) + 1
    return [round(start + i * step, 6) for i in range(count)]


def preset_scans() -> Dict[str, ScanSpec]:
    """Desk-scale and full-resolution sweeps of the outcoupling parameter space.

    Every entry of PRESET_ALIASES is registered too, under its own name.
    """
    n0 = 1.0e5
    presets = {
        "anti-trap-desk": dict(
            axes=[{"name": "rabi_hz", "values": [40.0, 90.0, 150.0]},
                  {"name": "anti_trap", "values": [True, False]}]),
        "anti-trap-full": dict(
            axes=[{"name": "rabi_hz", "values": [40.0, 90.0, 150.0]},
                  {"name": "anti_trap", "values": [True, False]}],
            baseline={"rtol": 1e-6}),
        "rabi-atoms-desk": dict(
            axes=[{"name": "rabi_hz", "values": _frange(0.0, 300.0, 10.0)},
                  {"name": "n_atoms", "values": [n0 * f for f in (0.5, 0.75, 1.0, 1.25, 1.5)]}]),
        "rabi-atoms-full": dict(
            axes=[{"name": "rabi_hz", "values": _frange(0.0, 300.0, 2.5)},
                  {"name": "n_atoms", "values": [round(n0 * f, 3) for f in _frange(0.5, 1.5, 0.1)]}]),
        "outcoupling-curves": dict(
            axes=[{"name": "rabi_hz", "values": [40.0, 90.0, 150.0, 250.0, 255.0]}],
            collect_time_series=True),
        "field-offset-desk": dict(
            axes=[{"name": "delta_b_mg", "values": _desk_delta_b()},
                  {"name": "rabi_hz", "values": [40.0, 90.0, 150.0]}]),
        "field-offset-atoms-desk": dict(
            axes=[{"name": "delta_b_mg", "values": _desk_delta_b()},
                  {"name": "n_atoms", "values": [0.5 * n0, n0, 1.5 * n0]}],
            baseline={"rabi_hz": 90.0}),
        "field-offset-full": dict(
            axes=[{"name": "delta_b_mg", "values": _frange(-1.0, 1.0, 0.02)},
                  {"name": "rabi_hz", "values": [40.0, 90.0, 150.0]}]),
        "field-offset-atoms-full": dict(
            axes=[{"name": "delta_b_mg", "values": _frange(-1.0, 1.0, 0.02)},
                  {"name": "n_atoms", "values": [0.5 * n0, n0, 1.5 * n0]}],
            baseline={"rabi_hz": 90.0}),
    }
    presets.update({alias: presets[target] for alias, target in PRESET_ALIASES.items()})
    return {name: ScanSpec(name=name, **body) for name, body in presets.items()}


def scan_preset(name: str) -> ScanSpec:
    presets = preset_scans()
    if name not in presets:
        raise ConfigError(f"Unknown scan preset {name!r}; choose from {sorted(presets)}")
    return presets[name]


def expected_oscillation_period(t_rf: float) -> float:
    """Spacing in Ω/2π (Hz) between adjacent full Rabi cycles for an rf pulse of length t_rf (s)."""
    if not t_rf > 0:
        raise DomainError("rf duration must be positive")
    return 1.0 / t_rf


def stripe_period(values, fractions) -> float:
    """Period of an oscillation of `fractions` over uniformly spaced `values` (autocorrelation).

    Returns NaN when no positive-lag autocorrelation maximum exists.
    """
    values = np.asarray(values, dtype=float)
    fractions = np.asarray(fractions, dtype=float)
    if len(values) < 4 or len(values) != len(fractions):
        return float("nan")
    order = np.argsort(values)
    values, fractions = values[order], fractions[order]
    steps = np.diff(values)
    if not np.allclose(steps, steps[0], rtol=1e-6):
        raise DomainError("stripe_period needs uniformly spaced values")
    trend = np.polyval(np.polyfit(values, fractions, 1), values)
    signal = fractions - trend
    corr = np.correlate(signal, signal, mode="full")[len(signal) - 1:]
    if corr[0] <= 0:
        return float("nan")
    corr = corr / corr[0]
    negative = np.nonzero(corr < 0)[0]
    if len(negative) == 0:
        return float("nan")
    for lag in range(int(negative[0]) + 1, len(corr) - 1):
        if corr[lag] >= corr[lag - 1] and corr[lag] >= corr[lag + 1] and corr[lag] > 0:
            a, b, c = corr[lag - 1], corr[lag], corr[lag + 1]
            denom = a - 2 * b + c
            shift = 0.5 * (a - c) / denom if denom != 0 else 0.0
            return float((lag + shift) * steps[0])
    return float("nan")


def _execute_run(baseline: Dict[str, Any], params: Dict[str, Any], run_id: str, run_dir: str):
    """Worker: one isolated propagation. Never raises."""
    start = time.time()
    try:
        run = parse_run_config({**baseline, **params, "name": run_id})
        summary = LaserSimulation(run, output_dir=Path(run_dir)).execute(force=True)
        metrics = dict(summary["row"])
        metrics.update({f"fraction_{k}": v for k, v in summary["fractions"].items()})
        metrics["absorbed_fraction"] = summary["absorbed_fraction"]
        metrics["mu_hz"] = summary["mu_hz"]
        metrics["checks_passed"] = summary["check"]["passed"]
        metrics["steps_rejected"] = summary["steps"]["rejected"]
        metrics = json.loads(json.dumps(metrics, default=json_default))
        return params, run_id, STATUS_COMPLETE, metrics, None, time.time() - start
    except Exception as exc:
        return params, run_id, STATUS_FAILED, None, f"{type(exc).__name__}: {exc}", time.time() - start


def run_scan(spec: ScanSpec, progress: bool = True) -> ScanResult:
    """Execute (or resume) every tuple of the scan with at most `parallelism` concurrent runs."""
    baseline = load_run_config(spec.baseline_config, **spec.baseline)
    checks = LaserSimulation(baseline).check()
    for check in checks.checks:
        logger.info("baseline check %-18s ratio %10.4g  %s", check.name, check.ratio,
                    "pass" if check.passed else "FAIL")

    scan_dir = Path(spec.output_dir or Config.OUTPUT_DIR) / spec.name
    manifest = ScanManifest(scan_dir / MANIFEST_NAME)
    manifest.set_spec(spec.json())
    baseline_data = baseline.dict()
    tuples = spec.tuples()
    run_ids = {canonical_key(p): f"run-{i:04d}" for i, p in enumerate(tuples)}

    pending = [p for p in tuples if not (spec.resume and manifest.is_complete(p))]
    skipped = len(tuples) - len(pending)
    if skipped:
        logger.info("resume: %d of %d runs already complete", skipped, len(tuples))

    bar = tqdm(total=len(pending), desc=f"Scan {spec.name}", disable=not progress)
    try:
        if spec.parallelism == 1:
            for params in pending:
                run_id = run_ids[canonical_key(params)]
                _store(manifest, _execute_run(baseline_data, params, run_id, str(scan_dir / run_id)))
                bar.update(1)
        else:
            with ProcessPoolExecutor(max_workers=spec.parallelism) as pool:
                futures = [pool.submit(_execute_run, baseline_data, params, run_ids[canonical_key(params)],
                                       str(scan_dir / run_ids[canonical_key(params)]))
                           for params in pending]
                for future in as_completed(futures):
                    _store(manifest, future.result())
                    bar.update(1)
    finally:
        bar.close()

    table = results_table(manifest, tuples, run_ids)
    files = {"results": scan_dir / "results.csv"}
    table.to_csv(files["results"], index=False)
    files.update(write_heatmaps(table, spec, scan_dir))
    if spec.collect_time_series:
        files["n0_vs_time"] = write_time_series(table, spec, scan_dir)
    counts = manifest.counts()
    manifest.close()
    return ScanResult(table, scan_dir, counts, files)


def _store(manifest: ScanManifest, outcome):
    params, run_id, status, metrics, error, wall = outcome
    if status == STATUS_FAILED:
        logger.warning("%s failed: %s", run_id, error)
    manifest.record(params, run_id, status, metrics, error, wall)


def results_table(manifest: ScanManifest, tuples, run_ids) -> pd.DataFrame:
    """One row per parameter tuple of the scan, failures included."""
    by_key = {row["run_key"]: row for row in manifest.rows()}
    records = []
    for params in tuples:
        key = canonical_key(params)
        row = by_key.get(key, {})
        record = {"run_id": run_ids[key], **params,
                  "status": row.get("status", "missing"),
                  "error": row.get("error"),
                  "wall_time_s": row.get("wall_time")}
        record.update(row.get("metrics") or {})
        records.append(record)
    return pd.DataFrame(records)


def write_heatmaps(table: pd.DataFrame, spec: ScanSpec, directory: Path) -> Dict[str, Path]:
    """Parameter-grid CSV matrices (and HTML heat maps) for two-axis scans."""
    files = {}
    if len(spec.axes) != 2:
        return files
    rows, cols = spec.axes[0].name, spec.axes[1].name
    for metric in HEATMAP_METRICS:
        if metric not in table.columns:
            continue
        pivot = table.pivot_table(index=rows, columns=cols, values=metric, aggfunc="first")
        path = directory / f"heatmap_{metric}.csv"
        pivot.to_csv(path)
        files[f"heatmap_{metric}"] = path
        write_html(heatmap_figure(pivot, metric, f"{spec.name}: {metric}"),
                   directory / f"heatmap_{metric}.html")
    return files


def write_time_series(table: pd.DataFrame, spec: ScanSpec, directory: Path) -> Path:
    """Combined N_0(t) of every completed run, tagged with its scan parameters."""
    frames = []
    names = [a.name for a in spec.axes]
    for _, row in table[table["status"] == STATUS_COMPLETE].iterrows():
        path = directory / row["run_id"] / PARTICLE_NUMBERS
        if not path.exists():
            continue
        numbers = pd.read_csv(path)[["t_ms", "N_0"]]
        for name in names:
            numbers[name] = row[name]
        frames.append(numbers)
    combined = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=["t_ms", "N_0"] + names)
    path = directory / "n0_vs_time.csv"
    combined.to_csv(path, index=False)
    if frames:
        combined["label"] = combined[names].astype(str).agg(", ".join, axis=1)
        write_html(curves_figure(combined, "t_ms", "N_0", "label", f"{spec.name}: N_0(t)"),
                   directory / "n0_vs_time.html")
    return path


def fidelity_ordering(table: pd.DataFrame) -> Dict[str, Optional[bool]]:
    """Rabi-frequency and anti-trap orderings of the fidelity in a (rabi_hz, anti_trap) scan."""
    def fidelity(rabi, anti_trap):
        rows = table[(table["rabi_hz"] == rabi) & (table["anti_trap"] == anti_trap)
                     & (table["status"] == STATUS_COMPLETE)]
        return float(rows["fidelity"].iloc[0]) if len(rows) and "fidelity" in rows else None

    def greater(a, b, strict=True):
        if a is None or b is None:
            return None
        return a > b if strict else a >= b

    return {
        "F(90) > F(40)": greater(fidelity(90.0, True), fidelity(40.0, True)),
        "F(90) > F(150)": greater(fidelity(90.0, True), fidelity(150.0, True)),
        "no anti-trap >= anti-trap at 40 Hz": greater(fidelity(40.0, False), fidelity(40.0, True), False),
        "no anti-trap >= anti-trap at 90 Hz": greater(fidelity(90.0, False), fidelity(90.0, True), False),
    }
