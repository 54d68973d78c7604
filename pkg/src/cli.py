"""Command-line entry point: check, ground, run, analyze, scan."""
import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from analysis import metrics, report_to_row
from config import Config
from errors import EXIT_CHECK, EXIT_OK, ConfigError, LaserError, exit_code_for
from run_config import load_run_config, sudden_release_defaults
from scanner import fidelity_ordering, load_scan_spec, run_scan, scan_preset
from simulation import LaserSimulation, write_json
from snapshots import read_snapshot, write_snapshot
from zeeman import LEVEL_NAMES, LEVELS, load_species

logger = logging.getLogger(__name__)


def _banner(title):
    print("=" * 60)
    print(title)
    print("=" * 60)
    print()


def _step(n, title):
    print(f"Step {n}: {title}")
    print("-" * 60)


def _progress(args):
    return not args.quiet and sys.stderr.isatty()


def _load_run(args):
    overrides = {}
    if args.sudden_release:
        overrides.update(sudden_release_defaults())
    if getattr(args, "preset", None):
        overrides["sequence"] = args.preset
    if args.output:
        overrides["output_dir"] = args.output
    return load_run_config(args.config, **overrides)


def _print_checks(report):
    for check in report.checks:
        mark = "✓" if check.passed else "❌"
        print(f"{mark} {check.name:<18} ratio {check.ratio:10.4g}  (threshold {check.threshold:g})")
    info = report.info
    print()
    print(f"  - μ_TF / h:                {info['mu_tf_hz']:.1f} Hz")
    print(f"  - anti-trap ratio:         {info['anti_trap_ratio']:.3e}")
    print(f"  - μ as field:              {info['chemical_potential_field_mg']:.3f} mG")
    print(f"  - Thomas-Fermi radii:      {', '.join(f'{r:.1f}' for r in info['thomas_fermi_radii_um'])} μm")
    if info.get("resonance_radii_um"):
        print(f"  - resonance shell radii:   {', '.join(f'{r:.1f}' for r in info['resonance_radii_um'])} μm")
    print(f"  - expected velocity:       {info['expected_velocity_um_s']:.0f} μm/s")
    print(f"  - grid:                    {info['grid']}")


def cmd_check(args):
    run = _load_run(args)
    _banner(f"Space Atom Laser - Preflight checks ({run.name})")
    simulation = LaserSimulation(run)
    report = simulation.check()
    _print_checks(report)
    write_json(simulation.output_dir / "check.json", report.to_dict())
    print()
    if not report.passed:
        print(f"❌ Hard checks failed: {', '.join(c.name for c in report.failures)}")
        return EXIT_CHECK
    print("✓ All checks passed")
    return EXIT_OK


def cmd_ground(args):
    run = _load_run(args)
    _banner(f"Space Atom Laser - Ground state ({run.name})")
    simulation = LaserSimulation(run, progress=_progress(args))
    _step(1, "Imaginary-time relaxation")
    ground = simulation.solve_ground_state()
    path = write_snapshot(simulation.output_dir / "snapshots" / "ground_state.snap", ground.psi,
                          simulation.grid, 0.0, "m1", metadata={"mu_joule": ground.mu})
    write_json(simulation.output_dir / "ground_state.json", ground.to_dict())
    print()
    mark = "✓" if ground.converged else "⚠️ "
    print(f"{mark} μ / h = {ground.mu / (2 * np.pi * simulation.species.hbar):.2f} Hz "
          f"after {ground.iterations} iterations (virial {ground.virial:.2e})")
    print(f"  - Snapshot: {path}")
    return EXIT_OK


def cmd_run(args):
    run = _load_run(args)
    _banner(f"Space Atom Laser - Simulation run ({run.name})")
    simulation = LaserSimulation(run, progress=_progress(args))

    _step(1, "Preflight checks")
    report = simulation.check()
    _print_checks(report)
    print()
    if not report.passed and args.force:
        print("⚠️  Checks failed, continuing because of --force")
    if args.dry_run:
        simulation.execute(dry_run=True, force=args.force)
        print(f"✓ Dry run: manifest written to {simulation.output_dir}")
        return EXIT_OK

    _step(2, "Ground state, propagation and analysis")
    summary = simulation.execute(force=args.force)
    print()
    row = summary["row"]
    print("=" * 60)
    print("✓ Run complete!")
    print(f"  - Final fractions:         {', '.join(f'{k}: {v:.3f}' for k, v in summary['fractions'].items())}")
    print(f"  - Absorbed:                {summary['absorbed_fraction']:.3f}")
    print(f"  - N_mp / N:                {row['outcoupled_fraction']:.3f}")
    print(f"  - mean speed:              {row['v_mean_um_s']:.0f} μm/s")
    print(f"  - σ_vx, σ_vz:              {row['sigma_vx_um_s']:.0f}, {row['sigma_vz_um_s']:.0f} μm/s")
    print(f"  - T_eff,x:                 {row['t_eff_x_pk']:.0f} pK")
    print(f"  - fidelity:                {row['fidelity']:.3f}")
    print(f"  - Output: {simulation.output_dir}")
    print("=" * 60)
    return EXIT_OK


def cmd_analyze(args):
    _banner("Space Atom Laser - Snapshot analysis")
    snapshot = read_snapshot(args.snapshot)
    species = load_species(args.species)
    psi = snapshot.field
    component = snapshot.component
    if psi.ndim == snapshot.grid.ndim + 1:
        level = int(args.component)
        psi = psi[LEVELS.index(level)]
        component = LEVEL_NAMES[level]
    report = metrics(psi, snapshot.grid, species=species, component=component,
                     fidelity_form=args.fidelity_form)
    row = report_to_row(report)
    for key, value in row.items():
        print(f"  - {key:<22} {value}")
    out = Path(args.output) if args.output else Path(args.snapshot).with_suffix(".analysis.json")
    write_json(out, {"snapshot": str(args.snapshot), "time_s": snapshot.time,
                     "analysis": report.to_dict(), "row": row})
    print()
    print(f"✓ Report written to {out}")
    return EXIT_OK


def cmd_scan(args):
    if args.spec:
        spec = load_scan_spec(args.spec)
    elif args.preset:
        spec = scan_preset(args.preset)
    else:
        raise ConfigError("scan needs a specification file or --preset")
    updates = {"parallelism": args.threads or (spec.parallelism if spec.parallelism > 1 else Config.threads())}
    if args.output:
        updates["output_dir"] = args.output
    if args.config:
        updates["baseline_config"] = args.config
    if args.no_resume:
        updates["resume"] = False
    spec = spec.copy(update=updates)

    _banner(f"Space Atom Laser - Parameter scan ({spec.name})")
    print(f"  - {spec.run_count} runs over {', '.join(a.name for a in spec.axes)}")
    print(f"  - {spec.parallelism} concurrent run(s)")
    print()
    _step(1, "Running scan")
    result = run_scan(spec, progress=_progress(args))
    print()
    if {"rabi_hz", "anti_trap"} <= set(result.table.columns):
        _step(2, "Fidelity ordering")
        for label, holds in fidelity_ordering(result.table).items():
            mark = "⚠️ " if holds is None else ("✓" if holds else "❌")
            logger.info("fidelity ordering %s: %s", label, holds)
            print(f"{mark} {label}")
        print()
    print("=" * 60)
    print("✓ Scan complete!")
    for status, count in sorted(result.counts.items()):
        print(f"  - {status}: {count}")
    for name, path in result.files.items():
        print(f"  - {name}: {path}")
    print("=" * 60)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(description="Space atom laser: rf outcoupling of a BEC in microgravity")
    parser.add_argument("--quiet", action="store_true", help="Disable progress bars")
    parser.add_argument("--threads", type=int, default=None,
                        help=f"Concurrent scan runs (default: LASER_THREADS={Config.THREADS})")
    sub = parser.add_subparsers(dest="command")

    def run_options(p):
        p.add_argument("--config", default=None, help="Run configuration file or name under data/configs")
        p.add_argument("--preset", default=None, help="Sequence preset name or sequence file")
        p.add_argument("--sudden-release", action="store_true",
                       help="Replace rf outcoupling by switching off the trap at t = 0")
        p.add_argument("--output", default=None, help=f"Output directory (default: {Config.OUTPUT_DIR})")

    p = sub.add_parser("check", help="Validate a configuration (Zeeman, Nyquist, rotating-wave checks)")
    run_options(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("ground", help="Compute and store the trapped ground state")
    run_options(p)
    p.set_defaults(func=cmd_ground)

    p = sub.add_parser("run", help="Ground state, propagation, analysis and artifacts")
    run_options(p)
    p.add_argument("--dry-run", action="store_true", help="Validate and write the manifest only")
    p.add_argument("--force", action="store_true", help="Run even if hard checks fail")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analyze", help="Main-peak metrics of a stored snapshot")
    p.add_argument("snapshot", help="Snapshot container file")
    p.add_argument("--component", default="0", choices=["-1", "0", "1"],
                   help="Spinor component of a three-component snapshot (default: 0)")
    p.add_argument("--species", default=None, help="Species preset or file")
    p.add_argument("--fidelity-form", default="amplitude", choices=["amplitude", "density"])
    p.add_argument("--output", default=None, help="Report path (default: next to the snapshot)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("scan", help="Parameter scan over N, Rabi frequency and field offset")
    p.add_argument("spec", nargs="?", default=None, help="Scan specification JSON")
    p.add_argument("--preset", default=None, help="Named scan preset (e.g. anti-trap-desk)")
    p.add_argument("--config", default=None, help="Baseline run configuration")
    p.add_argument("--output", default=None, help=f"Scan root directory (default: {Config.OUTPUT_DIR})")
    p.add_argument("--no-resume", action="store_true", help="Re-run tuples that already completed")
    p.set_defaults(func=cmd_scan)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        Config.validate()
    except ConfigError as exc:
        print(f"❌ {exc}")
        return exit_code_for(exc)
    logging.basicConfig(level=str(Config.LOG_LEVEL).upper(),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    if not getattr(args, "func", None):
        parser.print_help()
        return 1
    if args.threads is not None and args.threads < 1:
        print("❌ --threads must be >= 1")
        return exit_code_for(ConfigError("threads"))
    try:
        return args.func(args)
    except LaserError as exc:
        print(f"❌ {type(exc).__name__}: {exc}")
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
