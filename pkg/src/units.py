"""Unit conversions between experiment-friendly file units and SI."""
import numpy as np

GAUSS = 1.0e-4          # T
MILLIGAUSS = 1.0e-7     # T
MS = 1.0e-3             # s
UM = 1.0e-6             # m
MM = 1.0e-3             # m
UM_PER_S = 1.0e-6       # m/s
TWO_PI = 2.0 * np.pi


def hz_to_rad(f):
    """Frequency f = ω/2π in Hz to angular frequency in rad/s."""
    return TWO_PI * f


def rad_to_hz(omega):
    return omega / TWO_PI


def gauss_to_tesla(b):
    return b * GAUSS


def tesla_to_gauss(b):
    return b / GAUSS


def mg_to_tesla(b):
    return b * MILLIGAUSS


def tesla_to_mg(b):
    return b / MILLIGAUSS


def ms_to_s(t):
    return t * MS


def s_to_ms(t):
    return t / MS


def um_to_m(x):
    return x * UM


def m_to_um(x):
    return x / UM


def um_per_s_to_m_per_s(v):
    return v * UM_PER_S


def m_per_s_to_um_per_s(v):
    return v / UM_PER_S


def gradient_g_per_mm_to_t_per_m(g):
    """Field gradient in G/mm to T/m (1 G/mm = 0.1 T/m)."""
    return g * GAUSS / MM


def gradient_t_per_m_to_g_per_mm(g):
    return g * MM / GAUSS
