import numpy as np
import pytest

from errors import ConfigError
from grid import (AbsorbingLayer, FourierAxis, RadialAxis, cartesian_grid, check_nyquist,
                  cylindrical_grid, grid_preset, reduce_cylindrical, regrid)


def _gaussian_1d(grid, sigma, center=0.0, k0=0.0):
    (z,) = grid.coordinates()
    return ((np.pi * sigma**2) ** -0.25 * np.exp(-(z - center) ** 2 / (2 * sigma**2))
            * np.exp(1j * k0 * z))


def _gaussian_3d(grid, sigma):
    return (np.pi * sigma**2) ** -0.75 * np.exp(-grid.radius_squared() / (2 * sigma**2)) + 0j


def _second_moment(grid, psi):
    (z,) = grid.coordinates()
    return float(grid.integrate(z**2 * np.abs(psi) ** 2) / grid.norm(psi))


def test_point_counts_must_be_powers_of_two():
    with pytest.raises(ConfigError):
        FourierAxis("x", 100, 1e-3)
    with pytest.raises(ConfigError):
        RadialAxis("rho", 48, 1e-3)
    with pytest.raises(ConfigError):
        FourierAxis("x", 64, 0.0)


def test_gaussian_norm():
    grid = cartesian_grid((256,), (200e-6,))
    assert grid.norm(_gaussian_1d(grid, 5e-6)) == pytest.approx(1.0, abs=1e-10)


def test_momentum_transform_is_unitary():
    grid = cartesian_grid((64, 128), (40e-6, 80e-6))
    rng = np.random.default_rng(3)
    psi = rng.normal(size=grid.shape) + 1j * rng.normal(size=grid.shape)
    psi_k = grid.to_momentum(psi)
    assert np.sum(np.abs(psi_k) ** 2 * grid.momentum_weights) == pytest.approx(float(grid.norm(psi)), rel=1e-10)
    assert np.allclose(grid.from_momentum(psi_k), psi, atol=1e-10)


def test_cylindrical_momentum_transform_is_unitary(small_cylindrical):
    grid = small_cylindrical
    psi = _gaussian_3d(grid, 3e-6)
    psi_k = grid.to_momentum(psi)
    assert np.sum(np.abs(psi_k) ** 2 * grid.momentum_weights) == pytest.approx(float(grid.norm(psi)), rel=1e-10)
    assert np.allclose(grid.from_momentum(psi_k), psi, atol=1e-8 * np.max(np.abs(psi)))


def test_gaussian_is_minimum_uncertainty():
    grid = cartesian_grid((256,), (200e-6,))
    psi = _gaussian_1d(grid, 5e-6)
    psi_k = grid.to_momentum(psi)
    k2 = np.sum(grid.k_squared * np.abs(psi_k) ** 2 * grid.momentum_weights)
    assert 2 * np.sqrt(_second_moment(grid, psi) * k2) == pytest.approx(1.0, abs=1e-6)


def test_lattice_plane_wave_is_a_single_mode():
    grid = cartesian_grid((128,), (100e-6,))
    k0 = 2 * np.pi * 5 / 100e-6
    (z,) = grid.coordinates()
    weights = np.abs(grid.to_momentum(np.exp(1j * k0 * z))) ** 2
    peak = int(np.argmax(weights))
    assert grid.axes[0].k[peak] == pytest.approx(k0)
    assert weights[peak] / np.sum(weights) > 1 - 1e-12


def test_zero_step_is_identity(species):
    grid = cartesian_grid((64,), (50e-6,))
    psi = _gaussian_1d(grid, 4e-6, k0=1e6)
    assert np.array_equal(grid.apply_kinetic_phase(psi, 0.0, species.mass_kg, species.hbar), psi)


def test_free_gaussian_spreading(species):
    grid = cartesian_grid((512,), (200e-6,))
    sigma0, t = 5e-6, 5e-3
    psi = _gaussian_1d(grid, sigma0)
    evolved = grid.apply_kinetic_phase(psi, t, species.mass_kg, species.hbar)
    tau = species.hbar * t / (species.mass_kg * sigma0**2)
    ratio = np.sqrt(_second_moment(grid, evolved) / _second_moment(grid, psi))
    assert ratio == pytest.approx(np.sqrt(1 + tau**2), rel=1e-6)
    assert grid.norm(evolved) == pytest.approx(1.0, abs=1e-10)


def test_kinetic_phase_keeps_plane_wave_modulus(species):
    grid = cartesian_grid((128,), (100e-6,))
    (z,) = grid.coordinates()
    psi = np.exp(1j * 2 * np.pi * 7 / 100e-6 * z)
    evolved = grid.apply_kinetic_phase(psi, 1e-3, species.mass_kg, species.hbar)
    assert np.allclose(np.abs(evolved), 1.0, atol=1e-12)


@pytest.mark.parametrize("make_grid", [lambda: cartesian_grid((64,), (60e-6,)),
                                       lambda: cylindrical_grid(32, 15e-6, 64, 40e-6)])
def test_kinetic_phases_compose(make_grid, species):
    grid = make_grid()
    psi = np.exp(-grid.radius_squared() / (2 * (3e-6) ** 2)) + 0j
    m, hbar = species.mass_kg, species.hbar
    two_steps = grid.apply_kinetic_phase(grid.apply_kinetic_phase(psi, 0.3e-3, m, hbar), 0.5e-3, m, hbar)
    one_step = grid.apply_kinetic_phase(psi, 0.8e-3, m, hbar)
    assert np.max(np.abs(two_steps - one_step)) < 1e-10 * np.max(np.abs(psi))


def test_absorber_profile():
    grid = cartesian_grid((64, 64), (50e-6, 50e-6))
    layer = AbsorbingLayer()
    W = grid.absorber_potential(layer)
    assert W[32, 32] == 0.0
    assert W[0, 0] == pytest.approx(layer.strength)
    assert np.all(W >= 0)
    assert np.all(W[16:48, 16:48] == 0.0)
    only_z = grid.absorber_potential(layer, active_axes=("z",))
    assert np.all(only_z[:, 32] == 0.0)


def test_absorber_layer_validation():
    with pytest.raises(ConfigError):
        AbsorbingLayer(onset_fraction=0.6)
    with pytest.raises(ConfigError):
        AbsorbingLayer(strength=-1.0)


def test_absorber_swallows_outgoing_packet(species):
    grid = cartesian_grid((2048,), (400e-6,))
    k0 = species.mass_kg * 5e-3 / species.hbar
    psi = _gaussian_1d(grid, 10e-6, center=-50e-6, k0=k0)
    decay = np.exp(-grid.absorber_potential(AbsorbingLayer()) * 20e-6 / (2 * species.hbar))
    for _ in range(3000):
        psi = decay * grid.apply_kinetic_phase(decay * psi, 20e-6, species.mass_kg, species.hbar)
    assert grid.norm(psi) < 1e-3
    psi_k = grid.to_momentum(psi)
    backward = grid.axes[0].k < 0
    assert np.sum((np.abs(psi_k) ** 2 * grid.momentum_weights)[backward]) < 1e-3


def test_cylindrical_gaussian_norm_and_kinetic_energy(species):
    grid = cylindrical_grid(128, 30e-6, 256, 60e-6)
    sigma = 3e-6
    psi = _gaussian_3d(grid, sigma)
    assert grid.norm(psi) == pytest.approx(1.0, abs=1e-6)
    expected = species.hbar**2 * 3 / (4 * species.mass_kg * sigma**2)
    assert grid.kinetic_energy(psi, species.mass_kg, species.hbar) == pytest.approx(expected, rel=1e-3)


def test_expanded_grid(small_cylindrical):
    doubled = small_cylindrical.expanded(2)
    assert doubled.shape == (64, 128)
    assert doubled.extents == pytest.approx((30e-6, 80e-6))
    assert doubled.nyquist_momentum() == pytest.approx(small_cylindrical.nyquist_momentum(), rel=0.02)
    stretched = small_cylindrical.expanded(2, keep_spacing=False)
    assert stretched.shape == small_cylindrical.shape
    assert stretched.extents == pytest.approx((30e-6, 80e-6))
    with pytest.raises(ConfigError):
        small_cylindrical.expanded(3)


def test_fourier_regrid_keeps_samples():
    old = cartesian_grid((64,), (40e-6,))
    new = old.expanded(2)
    psi = _gaussian_1d(old, 3e-6, k0=2e5)
    moved = regrid(psi, old, new)
    assert np.allclose(moved[32:96], psi, atol=1e-10)
    assert new.norm(moved) == pytest.approx(float(old.norm(psi)), abs=1e-10)


def test_radial_regrid_preserves_norm(small_cylindrical):
    new = small_cylindrical.expanded(2)
    psi = _gaussian_3d(small_cylindrical, 3e-6)
    moved = regrid(psi, small_cylindrical, new)
    assert new.norm(moved) == pytest.approx(float(small_cylindrical.norm(psi)), rel=1e-4)


def test_regrid_needs_matching_geometry(small_cylindrical):
    with pytest.raises(ConfigError):
        regrid(np.zeros((64,)), cartesian_grid((64,), (1e-5,)), small_cylindrical)


def test_reduce_cylindrical(trapped):
    grid3d = cartesian_grid((64, 64, 128), (60e-6, 60e-6, 120e-6))
    reduced = reduce_cylindrical(grid3d, trapped())
    assert reduced.shape == (32, 128)
    assert reduced.extents == pytest.approx((30e-6, 120e-6))
    with pytest.raises(ConfigError):
        reduce_cylindrical(grid3d, trapped(omegas_hz=(30.0, 20.0, 15.0)))
    with pytest.raises(ConfigError):
        reduce_cylindrical(cartesian_grid((64, 32, 128), (60e-6, 60e-6, 120e-6)))


def test_nyquist_check(species):
    ratio = check_nyquist(grid_preset("desk-reduced"), 1.71e-3, species.mass_kg, species.hbar)
    assert ratio == pytest.approx(5.7, rel=0.02)
    with pytest.raises(ConfigError):
        check_nyquist(grid_preset("coarse-reduced"), 1.71e-3, species.mass_kg, species.hbar)


def test_presets():
    assert grid_preset("coarse-3d").shape == (32, 32, 64)
    assert grid_preset("coarse-reduced").shape == (64, 128)
    with pytest.raises(ConfigError):
        grid_preset("huge")
