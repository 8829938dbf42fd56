"""Unit conventions: energies in cm^-1, time in fs, temperature in K."""

import numpy as np
from scipy import constants

# speed of light in cm/fs
C_CM_PER_FS = constants.c * 100.0 * 1e-15

# angular frequency (rad/fs) per wavenumber (cm^-1)
CM_TO_RAD_FS = 2.0 * np.pi * C_CM_PER_FS

# Boltzmann constant in cm^-1 / K
KB_CM_PER_K = constants.k / (constants.h * constants.c * 100.0)


def cm_to_rad_fs(x):
    return CM_TO_RAD_FS * np.asarray(x) if np.ndim(x) else CM_TO_RAD_FS * x


def rad_fs_to_cm(x):
    return np.asarray(x) / CM_TO_RAD_FS if np.ndim(x) else x / CM_TO_RAD_FS


def kT_cm(temperature):
    """Thermal energy k_B T in cm^-1."""
    return KB_CM_PER_K * temperature


def period_fs(wavenumber):
    """Oscillation period in fs of a mode with the given wavenumber."""
    return 1.0 / (C_CM_PER_FS * wavenumber)
