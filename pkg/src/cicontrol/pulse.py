"""Chirped Gaussian pulses and the rotating-wave light-matter coupling.

For a chirp ``eta`` the pulse is

    E(t) = E_max F(tau) cos(Psi(tau)),   tau = t - t_center
    T(eta)   = T0 sqrt(1 + eta^2)
    E_max    = E0 / (1 + eta^2)^(1/4)
    F(tau)   = exp(-tau^2 / (2 T(eta)^2))
    Psi(tau) = w0 tau - eta tau^2 / (2 T0^2 (1 + eta^2))

so the chirp only adds quadratic spectral phase: fluence and spectral
magnitude do not depend on ``eta``. Times are in fs, ``omega0`` in cm^-1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np
import scipy.sparse as sp

from .model import OperatorMatrix, VibronicBasis, transition_operator
from .units import CM_TO_RAD_FS


@dataclass(frozen=True)
class PulseParams:
    e0: float = 60.0
    t0: float = 15.0
    omega0: float = 16000.0
    eta: float = 0.0
    t_center: float = 0.0

    def __post_init__(self):
        if not self.t0 > 0:
            raise ValueError(f"t0 must be positive, got {self.t0}")
        if self.e0 < 0:
            raise ValueError(f"e0 must be non-negative, got {self.e0}")
        if not self.omega0 > 0:
            raise ValueError(f"omega0 must be positive, got {self.omega0}")

    @property
    def omega0_rad_fs(self) -> float:
        return self.omega0 * CM_TO_RAD_FS

    @property
    def chirp_rate(self) -> float:
        """Coefficient of tau^2 subtracted from the phase, rad/fs^2."""
        return self.eta / (2.0 * self.t0**2 * (1.0 + self.eta**2))

    def replace(self, **changes) -> "PulseParams":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return PulseParams(**values)


def effective_duration(p: PulseParams) -> float:
    return p.t0 * math.sqrt(1.0 + p.eta**2)


def peak_amplitude(p: PulseParams) -> float:
    return p.e0 / (1.0 + p.eta**2) ** 0.25


def envelope(p: PulseParams, t):
    tau = np.asarray(t, dtype=float) - p.t_center
    return np.exp(-(tau**2) / (2.0 * effective_duration(p) ** 2))


def chirp_phase(p: PulseParams, t):
    """The non-carrier part of Psi, ``-eta tau^2 / (2 T0^2 (1 + eta^2))``."""
    tau = np.asarray(t, dtype=float) - p.t_center
    return -p.chirp_rate * tau**2


def phase(p: PulseParams, t):
    tau = np.asarray(t, dtype=float) - p.t_center
    return p.omega0_rad_fs * tau + chirp_phase(p, t)


def instantaneous_frequency(p: PulseParams, t):
    """dPsi/dt in rad/fs."""
    tau = np.asarray(t, dtype=float) - p.t_center
    return p.omega0_rad_fs - p.eta * tau / (p.t0**2 * (1.0 + p.eta**2))


def complex_envelope(p: PulseParams, t):
    """``E_max F exp(i (Psi - w0 tau))``, the field with the carrier removed."""
    return peak_amplitude(p) * envelope(p, t) * np.exp(1j * chirp_phase(p, t))


def field(p: PulseParams, t):
    """Real field ``E_max F cos(Psi)``."""
    return peak_amplitude(p) * envelope(p, t) * np.cos(phase(p, t))


def spectrum(p: PulseParams, omega_grid, dt: float | None = None, span: float = 8.0):
    """Spectral magnitude ``|E(w)|`` of the positive-frequency field.

    ``omega_grid`` is in rad/fs. The analytic signal ``E_max F exp(i Psi)`` is
    sampled with a rectangular window over ``t_center +- span * T(eta)``
    (the envelope is below exp(-span^2/2) at the edges) and transformed by a
    direct discrete Fourier sum at each requested frequency, so the grid need
    not be uniform. The default time step is a quarter of the Nyquist limit
    of the highest frequency involved.
    """
    w = np.atleast_1d(np.asarray(omega_grid, dtype=float))
    if w.size == 0:
        raise ValueError("empty frequency grid")
    width = effective_duration(p)
    # highest frequency the chirped pulse carries within the window
    w_top = max(float(np.max(np.abs(w))), p.omega0_rad_fs + span * width * abs(p.eta) / (p.t0**2 * (1 + p.eta**2)) + 8.0 / p.t0)
    nyquist = math.pi / w_top
    if dt is None:
        dt = nyquist / 4.0
    elif dt >= nyquist:
        raise ValueError(f"time step {dt} fs undersamples frequencies up to {w_top:.4g} rad/fs (need dt < {nyquist:.4g})")
    n = int(math.ceil(span * width / dt))
    tau = np.arange(-n, n + 1) * dt
    sig = peak_amplitude(p) * np.exp(-(tau**2) / (2 * width**2) + 1j * (p.omega0_rad_fs * tau - p.chirp_rate * tau**2))
    out = np.empty(w.size)
    for i, wi in enumerate(w):
        out[i] = abs(np.sum(sig * np.exp(-1j * wi * tau))) * dt
    return out


def analytic_spectrum(p: PulseParams, omega_grid):
    """Closed form ``E0 T0 sqrt(2 pi) exp(-(w - w0)^2 T0^2 / 2)``; independent of eta."""
    w = np.asarray(omega_grid, dtype=float)
    return p.e0 * p.t0 * math.sqrt(2 * math.pi) * np.exp(-((w - p.omega0_rad_fs) ** 2) * p.t0**2 / 2)


def rwa_coefficient(p: PulseParams, t, dipole: float, frame_frequency: float | None = None):
    """Coefficient ``g(t)`` of ``|e2><g|`` in the RWA coupling, in cm^-1.

    ``H_F = g |e2><g| + conj(g) |g><e2|`` with
    ``g = -(dipole E_max F / 2) exp(-i Psi)``. With ``frame_frequency`` (cm^-1)
    the excited manifold is taken in a frame rotating at that frequency, which
    multiplies ``g`` by ``exp(i w_frame t)``.
    """
    g = -0.5 * dipole * peak_amplitude(p) * envelope(p, t) * np.exp(-1j * phase(p, t))
    if frame_frequency is not None:
        g = g * np.exp(1j * frame_frequency * CM_TO_RAD_FS * np.asarray(t, dtype=float))
    return g


def interaction_hamiltonian(p: PulseParams, t: float, dipole: float, basis: VibronicBasis, rwa: bool = True) -> OperatorMatrix:
    """Light-matter coupling in cm^-1 at time ``t`` (fs).

    Only g <-> e2 is dipole allowed and the dipole is coordinate independent.
    With ``rwa=False`` the full ``-dipole E(t)`` coupling is returned.
    """
    up = transition_operator(basis).matrix
    down = up.getH()
    if rwa:
        g = complex(rwa_coefficient(p, t, dipole))
        m = g * up + np.conj(g) * down
    else:
        m = -dipole * float(field(p, t)) * (up + down)
    return OperatorMatrix(sp.csr_matrix(m), hermitian=True)
