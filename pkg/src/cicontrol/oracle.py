"""Reference calculations used to check the hierarchy propagator.

Nothing here shares code with :mod:`cicontrol.heom`: the closed-system
propagator works on state vectors with plain matrix-vector products, thermal
states come from full diagonalisation, and the weak-field and weak-coupling
limits are evaluated from their textbook formulas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .model import ModelParams, build_basis, build_hamiltonian
from .pulse import PulseParams, complex_envelope
from .units import CM_TO_RAD_FS, kT_cm

MAX_DENSE_DIM = 512


@dataclass
class StateTrajectory:
    times: np.ndarray
    states: np.ndarray
    norm_drift: float


def _as_matrix(h):
    m = getattr(h, "matrix", h)
    return m if sp.issparse(m) else np.asarray(m)


def schrodinger_propagate(
    psi0,
    h_of_t: Callable,
    dt: float,
    t_end: float,
    t_start: float = 0.0,
    stride: int = 1,
    max_drift: float = 1e-6,
) -> StateTrajectory:
    """RK4 for ``i dpsi/dt = H(t) psi`` with ``H`` in cm^-1 and ``t`` in fs.

    The norm is not renormalised; its largest deviation is reported and a
    drift beyond ``max_drift`` aborts.
    """
    psi = np.array(psi0, dtype=complex)
    n0 = np.linalg.norm(psi)
    if abs(n0 - 1.0) > 1e-10:
        raise ValueError(f"initial state norm {n0} is not 1")
    n_steps = int(round((t_end - t_start) / dt))
    c = -1j * CM_TO_RAD_FS

    def f(t, y):
        return c * (_as_matrix(h_of_t(t)) @ y)

    times, states = [t_start], [psi.copy()]
    drift = 0.0
    for s in range(n_steps):
        t = t_start + s * dt
        k1 = f(t, psi)
        k2 = f(t + dt / 2, psi + dt / 2 * k1)
        k3 = f(t + dt / 2, psi + dt / 2 * k2)
        k4 = f(t + dt, psi + dt * k3)
        psi = psi + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        drift = max(drift, abs(np.linalg.norm(psi) - 1.0))
        if drift > max_drift:
            raise RuntimeError(f"norm drift {drift:.3e} at t = {t + dt} fs")
        if (s + 1) % stride == 0:
            times.append(t_start + (s + 1) * dt)
            states.append(psi.copy())
    return StateTrajectory(np.array(times), np.array(states), drift)


def exact_propagate(psi0, h, times) -> np.ndarray:
    """``exp(-i H t) psi0`` for a constant Hamiltonian by diagonalisation."""
    m = _as_matrix(h)
    m = m.toarray() if sp.issparse(m) else m
    w, v = la.eigh(m)
    c = v.conj().T @ np.asarray(psi0, dtype=complex)
    t = np.asarray(times, dtype=float)
    return (v[None, :, :] * np.exp(-1j * CM_TO_RAD_FS * np.outer(t, w))[:, None, :]) @ c


def brute_force_thermal_state(h, temperature: float) -> np.ndarray:
    """``exp(-H / kT) / Z`` by full diagonalisation (``temperature`` in K, may be inf)."""
    m = _as_matrix(h)
    m = m.toarray() if sp.issparse(m) else np.asarray(m)
    if m.shape[0] > MAX_DENSE_DIM:
        raise ValueError(f"dimension {m.shape[0]} exceeds the dense limit {MAX_DENSE_DIM}")
    w, v = la.eigh(m)
    if math.isinf(temperature):
        p = np.ones_like(w)
    elif temperature <= 0:
        p = (w <= w[0] + 1e-9 * max(1.0, abs(w[0]))).astype(float)
    else:
        p = np.exp(-(w - w[0]) / kT_cm(temperature))
    p /= p.sum()
    return (v * p) @ v.conj().T


def bose_occupation(omega: float, temperature: float) -> float:
    return 1.0 / math.expm1(omega / kT_cm(temperature))


def perturbative_excited_population(p: PulseParams, model: ModelParams, span: float = 8.0, dt: float | None = None) -> float:
    """First-order population of the excited manifold after the pulse.

    ``c_f = -i <f|mu|g0> int g(t) exp(i w_f0 t) dt`` summed over the vibronic
    eigenstates ``f`` of the coupled excited block, with the RWA coupling
    ``g = -(mu E_max F / 2) exp(-i Psi)``. The time integral is a trapezoid
    sum of the carrier-free envelope over ``+- span T(eta)``.
    """
    basis = build_basis(model)
    h = build_hamiltonian(model, basis).matrix.toarray()
    exc = slice(basis.block, basis.dim)
    he = h[exc, exc]
    if he.shape[0] > MAX_DENSE_DIM:
        raise ValueError(f"excited block dimension {he.shape[0]} exceeds the dense limit")
    w, v = la.eigh(he)
    e_g0 = h[0, 0].real
    # <f| (|e2, 0, 0>) within the excited block
    e2_00 = basis.index("e2", 0, 0) - basis.block
    overlap = v[e2_00, :].conj()
    detuning = (w - e_g0 - p.omega0) * CM_TO_RAD_FS
    width = p.t0 * math.sqrt(1 + p.eta**2)
    if dt is None:
        fastest = np.max(np.abs(detuning)) + span * abs(p.eta) / (p.t0 * math.sqrt(1 + p.eta**2))
        dt = min(0.05 * width, 0.2 / max(fastest, 1e-12))
    n = int(math.ceil(span * width / dt))
    tau = np.arange(-n, n + 1) * dt
    # complex_envelope carries exp(+i chirp); the absorption term needs its conjugate
    env = np.conj(complex_envelope(p.replace(t_center=0.0), tau))
    integral = np.trapezoid(env[None, :] * np.exp(1j * np.outer(detuning, tau)), tau, axis=1)
    amp = 0.5 * model.dipole * CM_TO_RAD_FS * overlap * integral
    return float(np.sum(np.abs(amp) ** 2))


def gibbs_populations(h, temperature: float) -> np.ndarray:
    """Populations of the eigenstates of ``h`` (ascending energy) at thermal equilibrium."""
    m = _as_matrix(h)
    m = m.toarray() if sp.issparse(m) else np.asarray(m)
    w = la.eigvalsh(m)
    p = np.exp(-(w - w[0]) / kT_cm(temperature))
    return p / p.sum()


def secular_lindblad(h, coupling, spectral_density: Callable, temperature: float):
    """Secular Redfield (Lindblad) generator in the energy eigenbasis.

    The rate for a transition lowering the energy by ``w`` is
    ``|Q_fi|^2 2 J(w) (n(w) + 1)`` and raising it ``|Q_fi|^2 2 J(w) n(w)``,
    in cm^-1. Returns ``(energies, eigvecs, rates)`` with ``rates[f, i]``
    the i -> f rate.
    """
    m = _as_matrix(h)
    m = m.toarray() if sp.issparse(m) else np.asarray(m)
    q = _as_matrix(coupling)
    q = q.toarray() if sp.issparse(q) else np.asarray(q)
    w, v = la.eigh(m)
    qe = v.conj().T @ q @ v
    kT = kT_cm(temperature)
    rates = np.zeros((w.size, w.size))
    for i in range(w.size):
        for f in range(w.size):
            if i == f:
                continue
            gap = w[i] - w[f]
            if abs(gap) < 1e-12:
                continue
            n = 1.0 / math.expm1(abs(gap) / kT)
            strength = 2.0 * spectral_density(abs(gap)) * abs(qe[f, i]) ** 2
            rates[f, i] = strength * (n + 1.0 if gap > 0 else n)
    return w, v, rates


def lindblad_populations(rates: np.ndarray, p0, times) -> np.ndarray:
    """Eigenbasis populations under the Pauli master equation built from ``rates`` (times in fs)."""
    k = rates - np.diag(rates.sum(axis=0))
    k = k * CM_TO_RAD_FS
    p0 = np.asarray(p0, dtype=float)
    return np.array([la.expm(k * t) @ p0 for t in np.atleast_1d(times)])


def lindblad_steady_state(rates: np.ndarray) -> np.ndarray:
    k = rates - np.diag(rates.sum(axis=0))
    w, v = la.eig(k)
    i = int(np.argmin(np.abs(w)))
    p = np.real(v[:, i])
    return p / p.sum()
