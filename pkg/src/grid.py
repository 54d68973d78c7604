"""Spatial lattices with spectral transforms and absorbing layers.

Two geometries are supported: Cartesian grids of one to three axes with FFT
momentum duals, and the cylindrically reduced (ρ, z) grid whose radial axis
uses a quasi-discrete Hankel transform of order zero. Fields may carry
leading axes (e.g. the three spinor components); transforms always act on
the trailing grid axes.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
import scipy.fft
from scipy import linalg, special

from config import Config
from errors import ConfigError

logger = logging.getLogger(__name__)

CARTESIAN = "cartesian"
CYLINDRICAL = "cylindrical"


def _along(vector, axis, ndim):
    shape = [1] * ndim
    shape[axis] = -1
    return np.reshape(vector, shape)


def _apply_matrix(matrix, field, axis):
    return np.moveaxis(np.tensordot(matrix, field, axes=([1], [axis])), 0, axis)


class FourierAxis:
    """Uniform periodic axis centred on the origin with an FFT dual."""

    kind = "fourier"

    def __init__(self, name: str, n: int, extent: float):
        if n < 2 or n & (n - 1):
            raise ConfigError(f"Axis {name}: point count must be a power of two, got {n}")
        if not extent > 0:
            raise ConfigError(f"Axis {name}: extent must be positive")
        self.name = name
        self.n = int(n)
        self.extent = float(extent)
        self.spacing = self.extent / self.n
        self.points = -0.5 * self.extent + self.spacing * np.arange(self.n)
        self.weights = np.full(self.n, self.spacing)
        self.k = 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.spacing)
        self.dk = 2.0 * np.pi / self.extent
        self.k_weights = np.full(self.n, self.dk)

    @property
    def k_max(self) -> float:
        return np.pi / self.spacing

    def index_of(self, x: float) -> int:
        return int(np.clip(np.rint((x - self.points[0]) / self.spacing), 0, self.n - 1))

    def normalized_distance(self) -> np.ndarray:
        return np.abs(self.points) / (0.5 * self.extent)

    def forward(self, field, axis):
        return scipy.fft.fft(field, axis=axis, norm="ortho", workers=Config.fft_workers())

    def inverse(self, field, axis):
        return scipy.fft.ifft(field, axis=axis, norm="ortho", workers=Config.fft_workers())

    def momentum_factor(self) -> np.ndarray:
        """Raw orthonormal FFT output → unitary continuous transform."""
        return np.sqrt(self.spacing / self.dk) * np.exp(-1j * self.k * self.points[0])

    def interpolation_matrix(self, new_points, k_cut) -> np.ndarray:
        """Trigonometric interpolant of old samples evaluated at new points (zero outside)."""
        keep = np.abs(self.k) <= k_cut + 1e-12 * k_cut
        phases = np.exp(1j * np.outer(new_points - self.points[0], self.k)) * keep / self.n
        dft = np.exp(-2j * np.pi * np.outer(np.arange(self.n), np.arange(self.n)) / self.n)
        matrix = phases @ dft
        inside = np.abs(new_points) <= 0.5 * self.extent
        matrix[~inside, :] = 0.0
        return matrix

    def describe(self) -> Dict:
        return {"name": self.name, "kind": self.kind, "n": self.n, "extent": self.extent}


class RadialAxis:
    """Radial axis 0 < ρ < R sampled at Bessel zeros, with an orthogonalized Hankel transform."""

    kind = "radial"

    def __init__(self, name: str, n: int, radius: float):
        if n < 2 or n & (n - 1):
            raise ConfigError(f"Axis {name}: point count must be a power of two, got {n}")
        if not radius > 0:
            raise ConfigError(f"Axis {name}: radius must be positive")
        self.name = name
        self.n = int(n)
        self.extent = float(radius)
        zeros = special.jn_zeros(0, self.n + 1)
        self.zeros = zeros[:-1]
        self.s = zeros[-1]
        self.points = self.zeros * radius / self.s
        self.spacing = float(np.mean(np.diff(self.points)))
        j1 = np.abs(special.j1(self.zeros))
        self.weights = 4.0 * np.pi * radius**2 / (self.s**2 * j1**2)
        self.k = self.zeros / radius
        self.k_weights = 4.0 * np.pi / (radius**2 * j1**2)
        kernel = 2.0 * special.j0(np.outer(self.zeros, self.zeros) / self.s) / (np.outer(j1, j1) * self.s)
        self.matrix = linalg.polar(kernel)[0]
        self._sqrt_w = np.sqrt(self.weights)

    @property
    def k_max(self) -> float:
        return float(self.k[-1])

    def index_of(self, rho: float) -> int:
        return int(np.argmin(np.abs(self.points - rho)))

    def normalized_distance(self) -> np.ndarray:
        return self.points / self.extent

    def forward(self, field, axis):
        ndim = np.ndim(field)
        return _apply_matrix(self.matrix, field * _along(self._sqrt_w, axis, ndim), axis)

    def inverse(self, field, axis):
        ndim = np.ndim(field)
        return _apply_matrix(self.matrix.T, field, axis) / _along(self._sqrt_w, axis, ndim)

    def momentum_factor(self) -> np.ndarray:
        return 1.0 / np.sqrt(self.k_weights)

    def interpolation_matrix(self, new_points, k_cut) -> np.ndarray:
        """Fourier-Bessel series of old samples evaluated at new radii (zero beyond R)."""
        basis = special.j0(np.outer(self.zeros, self.zeros) / self.s)
        keep = self.k <= k_cut * (1 + 1e-12)
        evaluate = special.j0(np.outer(new_points, self.k)) * keep
        matrix = evaluate @ np.linalg.inv(basis)
        matrix[new_points > self.extent, :] = 0.0
        return matrix

    def describe(self) -> Dict:
        return {"name": self.name, "kind": self.kind, "n": self.n, "extent": self.extent}


def _make_axis(desc: Dict):
    if desc["kind"] == "radial":
        return RadialAxis(desc["name"], desc["n"], desc["extent"])
    return FourierAxis(desc["name"], desc["n"], desc["extent"])


@dataclass(frozen=True)
class AbsorbingLayer:
    """Quartic imaginary potential in the outer `onset_fraction` of every axis."""
    onset_fraction: float = 0.15
    strength: float = 2.0 * np.pi * 5.0e3 * 1.054571817e-34
    exponent: float = 4.0

    def __post_init__(self):
        if not 0.0 < self.onset_fraction < 0.5:
            raise ConfigError("Absorber onset fraction must lie in (0, 0.5)")
        if self.strength < 0 or self.exponent <= 0:
            raise ConfigError("Absorber strength must be >= 0 and exponent > 0")


class Grid:
    """Cartesian (1–3 axes) or cylindrical (ρ, z) lattice."""

    def __init__(self, axes: List, mode: str = CARTESIAN):
        if mode == CYLINDRICAL:
            if len(axes) != 2 or axes[0].kind != "radial" or axes[1].kind != "fourier":
                raise ConfigError("Cylindrical grid needs (radial ρ, fourier z) axes")
        elif mode == CARTESIAN:
            if not 1 <= len(axes) <= 3 or any(a.kind != "fourier" for a in axes):
                raise ConfigError("Cartesian grid needs one to three Fourier axes")
            if any(a.name not in ("x", "y", "z") for a in axes):
                raise ConfigError("Cartesian axis names must be x, y or z")
        else:
            raise ConfigError(f"Unknown grid mode {mode!r}")
        self.axes = tuple(axes)
        self.mode = mode
        self.shape = tuple(a.n for a in self.axes)
        self.ndim = len(self.axes)
        self._kinetic_cache = {}
        self.volume_weights = self._outer([a.weights for a in self.axes])
        self.k_squared = sum(_along(a.k**2, i, self.ndim) for i, a in enumerate(self.axes))
        self.momentum_weights = self._outer([a.k_weights for a in self.axes])

    def _outer(self, vectors):
        out = np.ones(self.shape)
        for i, v in enumerate(vectors):
            out = out * _along(v, i, self.ndim)
        return out

    # geometry
    def axis(self, name: str):
        for a in self.axes:
            if a.name == name:
                return a
        raise KeyError(name)

    def coordinates(self) -> List[np.ndarray]:
        return [_along(a.points, i, self.ndim) for i, a in enumerate(self.axes)]

    def cartesian_coordinates(self) -> Tuple:
        """(x, y, z) broadcastable against the grid shape; ρ stands in for x when cylindrical."""
        coords = dict(zip((a.name for a in self.axes), self.coordinates()))
        if self.mode == CYLINDRICAL:
            return coords["rho"], 0.0, coords["z"]
        return coords.get("x", 0.0), coords.get("y", 0.0), coords.get("z", 0.0)

    def radius_squared(self) -> np.ndarray:
        x, y, z = self.cartesian_coordinates()
        return np.square(x) + np.square(y) + np.square(z) + np.zeros(self.shape)

    @property
    def extents(self) -> Tuple[float, ...]:
        return tuple(a.extent for a in self.axes)

    def nyquist_momentum(self) -> float:
        return min(a.k_max for a in self.axes)

    def nyquist_velocity(self, mass: float, hbar: float = 1.054571817e-34) -> float:
        return hbar * self.nyquist_momentum() / mass

    # integrals
    def _offset(self, field):
        return np.ndim(field) - self.ndim

    def integrate(self, density) -> np.ndarray:
        """∫ density dV over the trailing grid axes."""
        axes = tuple(range(self._offset(density), np.ndim(density)))
        return np.sum(density * self.volume_weights, axis=axes)

    def norm(self, psi) -> np.ndarray:
        return self.integrate(np.abs(psi) ** 2)

    # spectral transforms
    def forward_raw(self, psi):
        offset = self._offset(psi)
        out = np.asarray(psi, dtype=complex)
        for i, a in enumerate(self.axes):
            out = a.forward(out, offset + i)
        return out

    def inverse_raw(self, psi_k):
        offset = self._offset(psi_k)
        out = np.asarray(psi_k, dtype=complex)
        for i, a in enumerate(self.axes):
            out = a.inverse(out, offset + i)
        return out

    def _momentum_factor(self):
        return self._outer([a.momentum_factor() for a in self.axes])

    def to_momentum(self, psi):
        """Unitary transform to the momentum lattice: Σ|ψ|²dV = Σ|ψ̃|²dV_k."""
        return self.forward_raw(psi) * self._momentum_factor()

    def from_momentum(self, psi_k):
        return self.inverse_raw(np.asarray(psi_k) / self._momentum_factor())

    def kinetic_phase(self, dt: float, mass: float, hbar: float, imaginary: bool = False):
        key = (float(dt), float(mass), float(hbar), bool(imaginary))
        phase = self._kinetic_cache.get(key)
        if phase is None:
            rate = hbar * self.k_squared / (2.0 * mass)
            phase = np.exp(-rate * dt) if imaginary else np.exp(-1j * rate * dt)
            if len(self._kinetic_cache) > 16:
                self._kinetic_cache.clear()
            self._kinetic_cache[key] = phase
        return phase

    def apply_kinetic_phase(self, psi, dt: float, mass: float, hbar: float = 1.054571817e-34,
                            imaginary: bool = False):
        """exp(-i ħk²dt/2M) in momentum space; imaginary=True uses exp(-ħk²τ/2M)."""
        if dt == 0:
            return np.array(psi, dtype=complex)
        return self.inverse_raw(self.forward_raw(psi) * self.kinetic_phase(dt, mass, hbar, imaginary))

    def laplacian(self, psi):
        return self.inverse_raw(-self.k_squared * self.forward_raw(psi))

    def kinetic_energy(self, psi, mass: float, hbar: float = 1.054571817e-34):
        """Σ ħ²k²/2M |ψ̂|² in the raw (unitary, weighted) representation."""
        raw = self.forward_raw(np.asarray(psi) * self._sqrt_weight_field(psi))
        axes = tuple(range(self._offset(psi), np.ndim(psi)))
        return np.sum(hbar**2 * self.k_squared / (2.0 * mass) * np.abs(raw) ** 2, axis=axes)

    def _sqrt_weight_field(self, psi):
        # radial weights are folded into the radial transform itself
        w = np.ones(self.shape)
        for i, a in enumerate(self.axes):
            if a.kind == "fourier":
                w = w * _along(np.sqrt(a.weights), i, self.ndim)
        return w

    # absorbing layer
    def absorber_potential(self, layer: AbsorbingLayer, active_axes=None) -> np.ndarray:
        """W(x) >= 0; the Hamiltonian carries -i·W. Maximum over axes, zero inside onset."""
        onset = 1.0 - layer.onset_fraction
        W = np.zeros(self.shape)
        for i, a in enumerate(self.axes):
            if active_axes is not None and a.name not in active_axes:
                continue
            d = a.normalized_distance()
            ramp = np.clip((d - onset) / layer.onset_fraction, 0.0, None) ** layer.exponent
            W = np.maximum(W, layer.strength * _along(ramp, i, self.ndim))
        return W

    # re-gridding
    def expanded(self, factor: int = 2, keep_spacing: bool = True) -> "Grid":
        """Grid with every extent multiplied by `factor` (a power of two).

        With keep_spacing the point counts grow by the same factor so the
        momentum cut-off is unchanged.
        """
        if factor < 1 or int(factor) & (int(factor) - 1):
            raise ConfigError(f"Expansion factor must be a power of two, got {factor}")
        axes = []
        for a in self.axes:
            n = a.n * int(factor) if keep_spacing else a.n
            cls = RadialAxis if a.kind == "radial" else FourierAxis
            axes.append(cls(a.name, n, a.extent * factor))
        return Grid(axes, self.mode)

    def describe(self) -> Dict:
        return {"mode": self.mode, "axes": [a.describe() for a in self.axes]}

    @classmethod
    def from_description(cls, desc: Dict) -> "Grid":
        return cls([_make_axis(a) for a in desc["axes"]], desc["mode"])

    def __repr__(self):
        dims = " x ".join(f"{a.name}:{a.n}" for a in self.axes)
        return f"Grid({self.mode}, {dims})"


def regrid(psi, old: Grid, new: Grid):
    """Spectral interpolation of a field onto another grid of the same geometry.

    Modes above the new grid's Nyquist momentum are discarded; points of the
    new grid outside the old extent are set to zero.
    """
    if old.mode != new.mode or [a.name for a in old.axes] != [a.name for a in new.axes]:
        raise ConfigError("regrid needs grids of identical geometry")
    offset = np.ndim(psi) - old.ndim
    out = np.asarray(psi, dtype=complex)
    before = old.norm(out)
    for i, (a, b) in enumerate(zip(old.axes, new.axes)):
        matrix = a.interpolation_matrix(b.points, b.k_max)
        out = _apply_matrix(matrix, out, offset + i)
    after = new.norm(out)
    lost = float(np.sum(before) - np.sum(after))
    if np.sum(before) > 0 and abs(lost) > 1e-6 * float(np.sum(before)):
        logger.info("regrid %r -> %r changed total norm by %.3e (%.2e relative)",
                    old, new, -lost, lost / float(np.sum(before)))
    return out


def reduce_cylindrical(grid3d: Grid, schedule=None) -> Grid:
    """(ρ, z) grid equivalent to a Cartesian 3D grid with equal x and y axes."""
    if grid3d.mode != CARTESIAN or [a.name for a in grid3d.axes] != ["x", "y", "z"]:
        raise ConfigError("reduce_cylindrical needs a Cartesian (x, y, z) grid")
    ax, ay, az = grid3d.axes
    if ax.n != ay.n or not np.isclose(ax.extent, ay.extent):
        raise ConfigError("reduce_cylindrical needs identical x and y axes")
    if schedule is not None and not schedule.is_axially_symmetric():
        raise ConfigError("Schedule is not axially symmetric (ω_x != ω_y); cannot reduce to (ρ, z)")
    return Grid([RadialAxis("rho", ax.n // 2, ax.extent / 2.0), FourierAxis("z", az.n, az.extent)],
                CYLINDRICAL)


def cartesian_grid(counts, extents) -> Grid:
    names = ("x", "y", "z")[3 - len(counts):]
    return Grid([FourierAxis(n, c, e) for n, c, e in zip(names, counts, extents)], CARTESIAN)


def cylindrical_grid(n_rho: int, radius: float, n_z: int, extent_z: float) -> Grid:
    return Grid([RadialAxis("rho", n_rho, radius), FourierAxis("z", n_z, extent_z)], CYLINDRICAL)


UM = 1.0e-6

GRID_PRESETS = {
    "desk-reduced": lambda: cylindrical_grid(256, 60 * UM, 1024, 240 * UM),
    "coarse-reduced": lambda: cylindrical_grid(64, 60 * UM, 128, 240 * UM),
    "validation-3d": lambda: cartesian_grid((128, 128, 128), (120 * UM, 120 * UM, 240 * UM)),
    "coarse-3d": lambda: cartesian_grid((32, 32, 64), (60 * UM, 60 * UM, 120 * UM)),
}


def grid_preset(name: str) -> Grid:
    try:
        return GRID_PRESETS[name]()
    except KeyError:
        raise ConfigError(f"Unknown grid preset {name!r}; choose from {sorted(GRID_PRESETS)}")


def check_nyquist(grid: Grid, velocity: float, mass: float, hbar: float = 1.054571817e-34,
                  safety: float = Config.NYQUIST_SAFETY) -> float:
    """Ratio k_Nyquist / (M v/ħ); ConfigError when below `safety`."""
    needed = mass * abs(velocity) / hbar
    ratio = float("inf") if needed == 0 else grid.nyquist_momentum() / needed
    if ratio < safety:
        raise ConfigError(f"Grid {grid!r} resolves velocities up to {grid.nyquist_velocity(mass, hbar) * 1e6:.0f} μm/s, "
                          f"only {ratio:.2f}x the expected {velocity * 1e6:.0f} μm/s (need {safety:g}x)")
    return ratio
