"""Shared fixtures; puts src/ on the path the same way run_laser.py does."""
import sys
from pathlib import Path

import numpy as np
import pytest

src_path = Path(__file__).resolve().parent.parent / "src"
sys.path.insert(0, str(src_path))

from fieldmodel import (FieldSchedule, HarmonicTrapSpec, Phase, PiecewiseLinear,  # noqa: E402
                        RfDriveSpec, SequenceTimeline)
from grid import cylindrical_grid  # noqa: E402
from units import gauss_to_tesla, hz_to_rad  # noqa: E402
from zeeman import RB87, transition_frequencies  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run minutes-scale physics reproductions")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def _schedule(omegas_hz, b_bot_g, t_max, rabi_hz, detuning_hz, species, omega0=None, name="test"):
    b_bot = gauss_to_tesla(b_bot_g)
    omega0 = transition_frequencies(b_bot, species)[0] if omega0 is None else omega0
    rf = RfDriveSpec(
        omega0=omega0,
        rabi=PiecewiseLinear.constant(hz_to_rad(rabi_hz)),
        detuning=PiecewiseLinear.constant(hz_to_rad(detuning_hz)),
        t_on=0.0,
        t_off=t_max,
    )
    scale = (1.0, 1.0) if max(omegas_hz) > 0 else (0.0, 0.0)
    timeline = SequenceTimeline((Phase("hold", 0.0, t_max, (b_bot, b_bot), scale),))
    return FieldSchedule(
        trap=HarmonicTrapSpec(tuple(hz_to_rad(f) for f in omegas_hz), b_bot),
        rf=rf, timeline=timeline, t_max=t_max, species=species, name=name,
    )


@pytest.fixture
def species():
    return RB87


@pytest.fixture
def homogeneous():
    """Factory: no trap, constant field, constant rf drive resonant with ω_{-1,0}."""
    def make(b_bot_g=1e-3, rabi_hz=100.0, t_max=10e-3, detuning_hz=0.0, species=RB87, omega0=None):
        return _schedule((0.0, 0.0, 0.0), b_bot_g, t_max, rabi_hz, detuning_hz, species, omega0,
                         name="homogeneous")
    return make


@pytest.fixture
def trapped():
    """Factory: reference trap at 4 G held for t_max with a constant rf drive."""
    def make(t_max=5e-3, rabi_hz=90.0, detuning_hz=319.0, species=RB87, omega0=None,
             omegas_hz=(30.0, 30.0, 15.0)):
        return _schedule(omegas_hz, 4.0, t_max, rabi_hz, detuning_hz, species, omega0, name="trapped")
    return make


@pytest.fixture
def small_cylindrical():
    return cylindrical_grid(32, 15e-6, 64, 40e-6)


@pytest.fixture
def harmonic_gaussian():
    """Factory: non-interacting oscillator ground state of the reference trap on a grid."""
    def make(grid, n_atoms=1.0, omegas_hz=(30.0, 30.0, 15.0), species=RB87):
        widths = np.sqrt(species.hbar / (species.mass_kg * hz_to_rad(np.asarray(omegas_hz))))
        x, y, z = grid.cartesian_coordinates()
        psi = np.exp(-(np.square(x) / widths[0] ** 2 + np.square(y) / widths[1] ** 2
                       + np.square(z) / widths[2] ** 2) / 2.0) + np.zeros(grid.shape)
        psi = psi.astype(complex)
        return psi * np.sqrt(n_atoms / float(grid.norm(psi)))
    return make
