"""Metrology of the outcoupled cloud.

The main peak is isolated with an ellipsoid bounded by the 1e-3-of-maximum
density contour along each axis; everything downstream (particle number,
velocity-space density, Gaussian widths, effective temperatures and the
isotropy fidelity) is restricted to it.
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.optimize import curve_fit

from errors import ConfigError, DomainError
from fieldmodel import FieldSchedule
from grid import CYLINDRICAL, Grid
from zeeman import RB87, SpeciesConstants, anti_trap_ratio

logger = logging.getLogger(__name__)

PEAK_THRESHOLD = 1.0e-3
FIDELITY_FORMS = ("amplitude", "density")


@dataclass
class MainPeakRegion:
    """Ellipsoid in grid-axis order; a cylindrical region has (ρ, z) semi-axes."""
    center: Tuple[float, ...]
    semi_axes: Tuple[float, ...]
    axis_names: Tuple[str, ...]
    threshold: float = PEAK_THRESHOLD
    clipped: bool = False

    def __post_init__(self):
        if any(not a > 0 for a in self.semi_axes):
            raise DomainError(f"Main-peak semi-axes must be positive, got {self.semi_axes}")

    def mask(self, grid: Grid) -> np.ndarray:
        r2 = np.zeros(grid.shape)
        for c, a, coord in zip(self.center, self.semi_axes, grid.coordinates()):
            r2 = r2 + ((coord - c) / a) ** 2
        return r2 <= 1.0

    def to_dict(self):
        return asdict(self)


@dataclass
class MomentumDistribution:
    """Velocity-space density n(v) = (M/ħ)^d |ψ̃(k = Mv/ħ)|² on the momentum lattice."""
    density: np.ndarray
    amplitude: np.ndarray
    velocities: Tuple[np.ndarray, ...]
    weights: np.ndarray
    axis_names: Tuple[str, ...]
    mode: str

    @property
    def norm(self) -> float:
        return float(np.sum(self.density * self.weights))

    def speed(self) -> np.ndarray:
        ndim = len(self.velocities)
        total = np.zeros(self.density.shape)
        for i, v in enumerate(self.velocities):
            shape = [1] * ndim
            shape[i] = -1
            total = total + np.reshape(v, shape) ** 2
        return np.sqrt(total)


@dataclass
class AnalysisReport:
    component: str
    n_total: float
    n_mp: float
    outcoupled_fraction: float
    mean_velocity: float
    sigma_vx: Optional[float]
    sigma_vz: Optional[float]
    t_eff_x: Optional[float]
    t_eff_z: Optional[float]
    fidelity: float
    fidelity_form: str = "amplitude"
    fit_failed: bool = False
    fidelity_undefined: bool = False
    region: Optional[MainPeakRegion] = None
    component_norms: Dict[str, float] = field(default_factory=dict)
    release_energy: Optional[float] = None

    def to_dict(self):
        data = asdict(self)
        data["region"] = self.region.to_dict() if self.region is not None else None
        return data


def effective_temperature(sigma_v: float, species: SpeciesConstants = RB87) -> float:
    """T_eff = M σ_v² / k_B."""
    return species.mass_kg * sigma_v**2 / species.k_b


def velocity_width_from_temperature(temperature: float, species: SpeciesConstants = RB87) -> float:
    if temperature < 0:
        raise DomainError("Temperature must be non-negative")
    return float(np.sqrt(species.k_b * temperature / species.mass_kg))


def _crossing(positions, values, level):
    """Outward scan: position where `values` first drops below `level` (log-linear interpolation)."""
    for j in range(1, len(values)):
        if values[j] < level:
            v0, v1 = values[j - 1], values[j]
            if v1 > 0:
                frac = (np.log(v0) - np.log(level)) / (np.log(v0) - np.log(v1))
            else:
                frac = (v0 - level) / (v0 - v1)
            return positions[j - 1] + frac * (positions[j] - positions[j - 1]), False
    return positions[-1], True


def _half_line_extent(positions, values, threshold):
    """Distance reached by the outward scan from the maximum of one half-line cut."""
    if len(values) == 0 or np.max(values) <= 0:
        return 0.0, False
    start = int(np.argmax(values))
    level = threshold * float(np.max(values))
    edge, clipped = _crossing(positions[start:], values[start:], level)
    return abs(edge), clipped


def find_main_peak(density, grid: Grid, threshold: float = PEAK_THRESHOLD) -> MainPeakRegion:
    """Ellipsoid whose semi-axes follow the threshold crossing along each axis cut.

    Cuts run through the density-weighted centre, not the density maximum: an
    outcoupled shell peaks on its ring while the cloud it bounds is centred on
    the trap. On each half-line the scan starts at the local maximum and moves
    outward. A semi-axis is the larger of its two half-line extents. Regions
    reaching the grid edge are clipped with a warning.
    """
    density = np.asarray(density, dtype=float)
    if np.any(density < 0) or not np.max(density) > 0:
        raise DomainError("find_main_peak needs a non-negative density with a positive maximum")
    total = float(grid.integrate(density))
    center = []
    for i, (a, coord) in enumerate(zip(grid.axes, grid.coordinates())):
        if a.kind == "radial":
            center.append(0.0)
        else:
            center.append(float(grid.integrate(density * coord)) / total)
    index = [a.index_of(c) for a, c in zip(grid.axes, center)]

    semi_axes, clipped_any = [], False
    for i, a in enumerate(grid.axes):
        cut_index = list(index)
        cut_index[i] = slice(None)
        cut = density[tuple(cut_index)]
        offsets = a.points - center[i]
        extents = []
        if a.kind == "radial":
            extents.append(_half_line_extent(offsets, cut, threshold))
        else:
            right = offsets >= 0
            extents.append(_half_line_extent(offsets[right], cut[right], threshold))
            left = ~right
            extents.append(_half_line_extent(offsets[left][::-1], cut[left][::-1], threshold))
        semi = max(e for e, _ in extents)
        clipped = any(c for _, c in extents)
        if clipped:
            logger.warning("find_main_peak: density along %s never falls below %.0e of its maximum; "
                           "region clipped at the grid edge", a.name, threshold)
        clipped_any = clipped_any or clipped
        semi_axes.append(max(semi, a.spacing))
    return MainPeakRegion(tuple(center), tuple(semi_axes), tuple(a.name for a in grid.axes),
                          threshold, clipped_any)


def restricted_momentum_density(psi, grid: Grid, region: Optional[MainPeakRegion] = None,
                                species: SpeciesConstants = RB87) -> MomentumDistribution:
    """Transform of ψ masked to the main-peak ellipsoid, on the velocity lattice v = ħk/M."""
    masked = np.asarray(psi) * region.mask(grid) if region is not None else np.asarray(psi)
    psi_k = grid.to_momentum(masked)
    dims = 3 if grid.mode == CYLINDRICAL else grid.ndim
    scale = (species.mass_kg / species.hbar) ** dims
    velocities = tuple(species.hbar * a.k / species.mass_kg for a in grid.axes)
    amplitude = np.abs(psi_k) * np.sqrt(scale)
    return MomentumDistribution(
        density=amplitude**2,
        amplitude=amplitude,
        velocities=velocities,
        weights=grid.momentum_weights / scale,
        axis_names=tuple(a.name for a in grid.axes),
        mode=grid.mode,
    )


def mean_speed(distribution: MomentumDistribution) -> float:
    """v̄ = ∫|v| n(v) d³v / ∫ n(v) d³v."""
    norm = distribution.norm
    if norm <= 0:
        return float("nan")
    return float(np.sum(distribution.speed() * distribution.density * distribution.weights)) / norm


def _gaussian(v, amplitude, v0, sigma):
    return amplitude * np.exp(-(v - v0) ** 2 / (2.0 * sigma**2))


def fit_gaussian_width(v, values) -> Optional[float]:
    """σ of A·exp(-(v-v₀)²/2σ²) fitted to a 1D cut; None for degenerate cuts."""
    v = np.asarray(v, dtype=float)
    values = np.asarray(values, dtype=float)
    order = np.argsort(v)
    v, values = v[order], values[order]
    peak = float(np.max(values)) if len(values) else 0.0
    if len(values) < 4 or not peak > 0 or np.ptp(values) <= 1e-12 * peak:
        return None
    above = v[values >= 0.5 * peak]
    guess_sigma = max((above[-1] - above[0]) / 2.355, np.min(np.diff(v)))
    p0 = (peak, v[int(np.argmax(values))], guess_sigma)
    try:
        params, _ = curve_fit(_gaussian, v, values, p0=p0, maxfev=10000)
    except (RuntimeError, ValueError) as exc:
        logger.warning("Gaussian fit failed: %s", exc)
        return None
    sigma = abs(float(params[2]))
    if not np.isfinite(sigma) or sigma <= 0:
        return None
    return sigma


def _velocity_cuts(distribution: MomentumDistribution):
    """Positive-v half-cuts of n(v) along v_x and v_z through v = 0."""
    d = distribution.density
    if distribution.mode == CYLINDRICAL:
        v_rho, v_z = distribution.velocities
        iz = int(np.argmin(np.abs(v_z)))
        cut_x = (v_rho, d[:, iz])
        positive = v_z >= 0
        cut_z = (v_z[positive], d[0, positive])
        return cut_x, cut_z
    names = distribution.axis_names
    if "x" not in names or "z" not in names:
        raise ConfigError("Velocity cuts need x and z axes")
    zero = tuple(int(np.argmin(np.abs(v))) for v in distribution.velocities)
    cuts = []
    for name in ("x", "z"):
        i = names.index(name)
        index = list(zero)
        index[i] = slice(None)
        v = distribution.velocities[i]
        positive = v >= 0
        cuts.append((v[positive], d[tuple(index)][positive]))
    return tuple(cuts)


def velocity_plane(distribution: MomentumDistribution, quantity: str = "amplitude"):
    """(v_x axis, v_z axis, values[v_x, v_z]) on the v_y = 0 plane, sorted ascending."""
    values = distribution.amplitude if quantity == "amplitude" else distribution.density
    if distribution.mode == CYLINDRICAL:
        v_rho, v_z = distribution.velocities
        order = np.argsort(v_z)
        plane = values[:, order]
        vx = np.concatenate([-v_rho[::-1], v_rho])
        plane = np.concatenate([plane[::-1], plane], axis=0)
        return vx, v_z[order], plane
    names = distribution.axis_names
    if names != ("x", "y", "z"):
        raise ConfigError("Velocity plane needs a 3D Cartesian or cylindrical grid")
    vx, vy, vz = distribution.velocities
    plane = values[:, int(np.argmin(np.abs(vy))), :]
    ox, oz = np.argsort(vx), np.argsort(vz)
    return vx[ox], vz[oz], plane[np.ix_(ox, oz)]


def momentum_overlap_fidelity(vx, vz, amplitude, form: str = "amplitude") -> float:
    """Overlap of |ψ̃(v_x, 0, v_z)| with its copy rotated by 90° in the v_x–v_z plane.

    amplitude form: ∫|ψ̃|·|ψ̃_swap| / ∫|ψ̃|²; density form: ∫|ψ̃|²|ψ̃_swap|² / ∫|ψ̃|⁴.
    Both lattices are resampled onto a common square lattice first.
    """
    if form not in FIDELITY_FORMS:
        raise ConfigError(f"Fidelity form must be one of {FIDELITY_FORMS}")
    vx, vz = np.asarray(vx, dtype=float), np.asarray(vz, dtype=float)
    amplitude = np.abs(np.asarray(amplitude))
    step = min(np.min(np.diff(vx)), np.min(np.diff(vz)))
    limit = min(np.max(np.abs(vx)), np.max(np.abs(vz)))
    n = int(np.floor(limit / step))
    lattice = step * np.arange(-n, n + 1)
    interpolator = RegularGridInterpolator((vx, vz), amplitude, bounds_error=False, fill_value=0.0)
    U, W = np.meshgrid(lattice, lattice, indexing="ij")
    common = interpolator(np.stack([U.ravel(), W.ravel()], axis=-1)).reshape(U.shape)
    if form == "density":
        common = common**2
    denominator = float(np.sum(common**2))
    if denominator <= 0:
        return float("nan")
    return float(np.sum(common * common.T)) / denominator


def predicted_release_energy(schedule: FieldSchedule, mu: float, t: float) -> float:
    """μ_{-1}(t) - ħΔ_rf(t) / (1 + anti-trap ratio at B_bot(t))."""
    schedule.check_time(t)
    sp = schedule.species
    ratio = anti_trap_ratio(schedule.b_bot(t), sp) if schedule.anti_trap else 0.0
    return mu - sp.hbar * schedule.detuning(t) / (1.0 + ratio)


def metrics(psi, grid: Grid, region: Optional[MainPeakRegion] = None,
            species: SpeciesConstants = RB87, n_total: Optional[float] = None,
            component: str = "0", fidelity_form: str = "amplitude",
            component_norms: Optional[Dict[str, float]] = None) -> AnalysisReport:
    """Main-peak particle number, mean speed, Gaussian widths, T_eff and fidelity."""
    psi = np.asarray(psi)
    density = np.abs(psi) ** 2
    region = region or find_main_peak(density, grid)
    n_mp = float(grid.integrate(density * region.mask(grid)))
    n_total = float(n_total) if n_total is not None else float(grid.integrate(density))
    distribution = restricted_momentum_density(psi, grid, region, species)

    (vx_cut, nx_cut), (vz_cut, nz_cut) = _velocity_cuts(distribution)
    sigma_x = fit_gaussian_width(vx_cut, nx_cut)
    sigma_z = fit_gaussian_width(vz_cut, nz_cut)
    fit_failed = sigma_x is None or sigma_z is None

    vx, vz, plane = velocity_plane(distribution, "amplitude")
    fidelity = momentum_overlap_fidelity(vx, vz, plane, fidelity_form)

    return AnalysisReport(
        component=component,
        n_total=n_total,
        n_mp=n_mp,
        outcoupled_fraction=n_mp / n_total if n_total > 0 else float("nan"),
        mean_velocity=mean_speed(distribution),
        sigma_vx=sigma_x,
        sigma_vz=sigma_z,
        t_eff_x=effective_temperature(sigma_x, species) if sigma_x is not None else None,
        t_eff_z=effective_temperature(sigma_z, species) if sigma_z is not None else None,
        fidelity=fidelity,
        fidelity_form=fidelity_form,
        fit_failed=fit_failed,
        fidelity_undefined=not np.isfinite(fidelity),
        region=region,
        component_norms=dict(component_norms or {}),
    )


def report_to_row(report: AnalysisReport) -> Dict[str, float]:
    """Flat record in file units (μm/s, pK) for scan tables."""
    def scaled(value, factor):
        return value * factor if value is not None else np.nan

    row = {
        "component": report.component,
        "n_total": report.n_total,
        "n_mp": report.n_mp,
        "outcoupled_fraction": report.outcoupled_fraction,
        "v_mean_um_s": report.mean_velocity * 1e6,
        "sigma_vx_um_s": scaled(report.sigma_vx, 1e6),
        "sigma_vz_um_s": scaled(report.sigma_vz, 1e6),
        "t_eff_x_pk": scaled(report.t_eff_x, 1e12),
        "t_eff_z_pk": scaled(report.t_eff_z, 1e12),
        "fidelity": report.fidelity,
        "fit_failed": report.fit_failed,
    }
    for name, value in report.component_norms.items():
        row[f"N_{name}_final"] = value
    return row
