"""Hierarchical equations of motion for two Drude baths.

The tuning and coupling coordinates each couple linearly to their own
harmonic bath with spectral density ``J(w) = 2 lambda w gamma / (w^2 + gamma^2)``.
The bath correlation function is expanded in exponentials

    C(t) = sum_k c_k exp(-nu_k t)
    c_0 = lambda gamma (cot(beta gamma / 2) - i),   nu_0 = gamma
    c_k = 4 lambda gamma nu_k / (beta (nu_k^2 - gamma^2)),   nu_k = 2 pi k / beta

and every ADO obeys

    d rho_n/dt = -i [H, rho_n] - sum_k n_k nu_k rho_n
                 - i sum_k [Q_k, rho_{n+e_k}]
                 - i sum_k n_k (c_k Q_k rho_{n-e_k} - c_k^* rho_{n-e_k} Q_k)

Internally ADOs are rescaled by ``prod_k sqrt(n_k! |c_k|^n_k)`` which keeps
all tiers of comparable magnitude; the scaling is undone on access.

Energies are in cm^-1, time in fs.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, fields
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .model import OperatorMatrix
from .units import CM_TO_RAD_FS, kT_cm

log = logging.getLogger(__name__)

BATHS = ("tuning", "coupling")


class PropagationError(RuntimeError):
    """Numerical abort during propagation."""

    def __init__(self, message, time=None, frames=None):
        super().__init__(message)
        self.time = time
        self.frames = frames or []


@dataclass(frozen=True)
class BathParams:
    lambda_t: float = 10.0
    lambda_c: float = 10.0
    gamma: float = 100.0
    temperature: float = 300.0
    n_matsubara: int = 1
    # None: apply the residual Matsubara correction when n_matsubara <= 1
    low_temp_correction: bool | None = None

    def __post_init__(self):
        if self.lambda_t < 0 or self.lambda_c < 0:
            raise ValueError("reorganization energies must be non-negative")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.n_matsubara < 0:
            raise ValueError("n_matsubara must be non-negative")

    @property
    def beta(self) -> float:
        return 1.0 / kT_cm(self.temperature)

    @property
    def use_correction(self) -> bool:
        if self.low_temp_correction is None:
            return self.n_matsubara <= 1
        return bool(self.low_temp_correction)

    def replace(self, **changes) -> "BathParams":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return BathParams(**values)


@dataclass(frozen=True)
class ExponentialMode:
    coefficient: complex
    rate: float
    bath: str

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("exponential rates must be positive")


def drude_spectral_density(omega, reorganization: float, gamma: float):
    omega = np.asarray(omega, dtype=float)
    return 2.0 * reorganization * omega * gamma / (omega**2 + gamma**2)


def matsubara_frequency(k: int, temperature: float) -> float:
    return 2.0 * math.pi * k * kT_cm(temperature)


def _drude_terms(reorganization, gamma, beta, n_matsubara, bath):
    modes = [ExponentialMode(reorganization * gamma * (1.0 / math.tan(beta * gamma / 2.0) - 1j), gamma, bath)]
    for k in range(1, n_matsubara + 1):
        nu = 2.0 * math.pi * k / beta
        if math.isclose(nu, gamma, rel_tol=1e-9):
            raise ValueError(
                f"Matsubara frequency {nu:.6g} cm^-1 coincides with gamma; perturb gamma slightly"
            )
        c = 4.0 * reorganization * gamma * nu / (beta * (nu**2 - gamma**2))
        modes.append(ExponentialMode(complex(c), nu, bath))
    return modes


def bath_decomposition(b: BathParams) -> list[ExponentialMode]:
    """Exponential modes of both baths, tuning bath first, ``K + 1`` each."""
    beta = b.beta
    out = []
    for lam, name in ((b.lambda_t, "tuning"), (b.lambda_c, "coupling")):
        out.extend(_drude_terms(lam, b.gamma, beta, b.n_matsubara, name))
    return out


def residual_correction(reorganization: float, gamma: float, beta: float, n_matsubara: int) -> float:
    """Weight of the Matsubara tail beyond ``n_matsubara`` folded into a delta function.

    Uses the closed form ``sum_{k>=1} c_k / nu_k = 2 lambda / (beta gamma) - lambda cot(beta gamma / 2)``.
    """
    total = 2.0 * reorganization / (beta * gamma) - reorganization / math.tan(beta * gamma / 2.0)
    kept = 0.0
    for k in range(1, n_matsubara + 1):
        nu = 2.0 * math.pi * k / beta
        kept += 4.0 * reorganization * gamma / (beta * (nu**2 - gamma**2))
    return total - kept


def bath_correlation(t, b: BathParams, bath: str = "tuning", n_terms: int | None = None):
    """C(t) in cm^-2 for ``t`` in fs from the exponential expansion (``n_terms`` Matsubara terms)."""
    lam = b.lambda_t if bath == "tuning" else b.lambda_c
    modes = _drude_terms(lam, b.gamma, b.beta, b.n_matsubara if n_terms is None else n_terms, bath)
    t = np.asarray(t, dtype=float)
    return sum(m.coefficient * np.exp(-m.rate * CM_TO_RAD_FS * t) for m in modes)


def counterterm(b: BathParams, couplings: dict) -> sp.csr_matrix:
    """Reorganization counterterm ``lambda_t Q_t^2 + lambda_c Q_c^2`` in cm^-1.

    A bath coupled through ``(x + c Q / (m w^2))^2`` adds ``sum c^2 / (2 m w^2) Q^2
    = lambda Q^2`` to the system, which cancels the potential renormalisation
    the bath produces; without it a damped oscillator equilibrates at a
    softened frequency.
    """
    out = None
    for lam, name in ((b.lambda_t, "tuning"), (b.lambda_c, "coupling")):
        q = couplings.get(name)
        if q is None or lam == 0:
            continue
        q = _csr(q)
        term = lam * (q @ q)
        out = term if out is None else out + term
    if out is None:
        dims = [_csr(q).shape for q in couplings.values() if q is not None]
        return sp.csr_matrix(dims[0] if dims else (0, 0), dtype=complex)
    return _csr(out)


def count_ados(n_modes: int, depth: int, limit: int = 10**7) -> int:
    if n_modes < 1 or depth < 0:
        raise ValueError("need n_modes >= 1 and depth >= 0")
    n = math.comb(n_modes + depth, depth)
    if n > limit:
        raise OverflowError(f"{n} ADOs exceeds the limit {limit}")
    return n


def hierarchy_indices(n_modes: int, depth: int) -> list[tuple[int, ...]]:
    """All multi-indices with tier <= depth, ordered by tier then lexicographically."""
    count_ados(max(n_modes, 1), depth)
    out = []
    for tier in range(depth + 1):
        level = []
        for combo in itertools.combinations_with_replacement(range(n_modes), tier):
            idx = [0] * n_modes
            for k in combo:
                idx[k] += 1
            level.append(tuple(idx))
        out.extend(sorted(level, reverse=True))
    return out


class Hierarchy:
    """Index tables and coupling coefficients for one bath configuration.

    Modes with a zero coefficient never source their ADOs and are dropped.
    ``terminator`` is ``"truncate"`` (ADOs beyond ``depth`` are zero) or
    ``"markovian"`` (deepest tier closed with the time-local approximation).
    """

    def __init__(self, modes: Sequence[ExponentialMode], depth: int, corrections=None, terminator: str = "truncate"):
        if depth < 0:
            raise ValueError("depth must be >= 0")
        if terminator not in ("truncate", "markovian"):
            raise ValueError(f"unknown terminator {terminator!r}")
        self.all_modes = list(modes)
        self.modes = [m for m in self.all_modes if m.coefficient != 0]
        self.depth = depth
        self.terminator = terminator
        self.corrections = dict(corrections or {})
        self.indices = hierarchy_indices(len(self.modes), depth) if self.modes else [()]
        self.lookup = {idx: i for i, idx in enumerate(self.indices)}
        self._build_tables()

    @property
    def n_ados(self) -> int:
        return len(self.indices)

    def _build_tables(self):
        n, m = self.n_ados, len(self.modes)
        nb = len(BATHS)
        self.mode_bath = np.array([BATHS.index(md.bath) for md in self.modes], dtype=np.int64)
        c = np.array([md.coefficient for md in self.modes], dtype=complex)
        nu = np.array([md.rate for md in self.modes], dtype=float)
        absc = np.abs(c)
        self.up = -np.ones((n, m), dtype=np.int64)
        self.down = -np.ones((n, m), dtype=np.int64)
        self.up_coef = np.zeros((n, m), dtype=complex)
        self.down_left = np.zeros((n, m), dtype=complex)
        self.down_right = np.zeros((n, m), dtype=complex)
        self.damping = np.zeros(n, dtype=complex)
        self.y_left = np.zeros((n, nb), dtype=complex)
        self.y_right = np.zeros((n, nb), dtype=complex)
        self.scale = np.ones(n)
        for a, idx in enumerate(self.indices):
            tier = sum(idx)
            self.damping[a] = float(np.dot(idx, nu)) if m else 0.0
            self.scale[a] = float(np.prod([math.sqrt(math.factorial(k) * absc[j] ** k) for j, k in enumerate(idx)])) if m else 1.0
            for k in range(m):
                nk = idx[k]
                plus = list(idx)
                plus[k] += 1
                u = self.lookup.get(tuple(plus))
                if u is not None:
                    self.up[a, k] = u
                    self.up_coef[a, k] = math.sqrt((nk + 1) * absc[k])
                elif self.terminator == "markovian" and tier == self.depth:
                    b = self.mode_bath[k]
                    w = -1j * (nk + 1) / (self.damping[a] + nu[k])
                    self.y_left[a, b] += w * c[k]
                    self.y_right[a, b] += w * np.conj(c[k])
                if nk > 0:
                    minus = list(idx)
                    minus[k] -= 1
                    self.down[a, k] = self.lookup[tuple(minus)]
                    phase = c[k] / absc[k]
                    self.down_left[a, k] = math.sqrt(nk * absc[k]) * phase
                    self.down_right[a, k] = math.sqrt(nk * absc[k]) * np.conj(phase)
            for bname, delta in self.corrections.items():
                b = BATHS.index(bname)
                self.y_left[a, b] += -1j * delta
                self.y_right[a, b] += -1j * delta

    def scaled(self, factor: float) -> dict:
        """Kernel tables with rates multiplied by ``factor`` (cm^-1 -> rad/fs)."""
        return dict(
            damping=self.damping * factor,
            up=self.up,
            down=self.down,
            up_coef=self.up_coef * factor,
            down_left=self.down_left * factor,
            down_right=self.down_right * factor,
            mode_bath=self.mode_bath,
            y_left=self.y_left * factor,
            y_right=self.y_right * factor,
        )


def build_hierarchy(b: BathParams, depth: int, terminator: str = "truncate") -> Hierarchy:
    modes = bath_decomposition(b)
    corrections = {}
    if b.use_correction:
        for lam, name in ((b.lambda_t, "tuning"), (b.lambda_c, "coupling")):
            if lam > 0:
                corrections[name] = residual_correction(lam, b.gamma, b.beta, b.n_matsubara)
    return Hierarchy(modes, depth, corrections, terminator)


class HierarchyState:
    """All ADOs of one hierarchy; ``state[idx]`` returns the unscaled ADO."""

    def __init__(self, hierarchy: Hierarchy, ados: np.ndarray):
        ados = np.asarray(ados, dtype=complex)
        if ados.ndim != 3 or ados.shape[0] != hierarchy.n_ados or ados.shape[1] != ados.shape[2]:
            raise ValueError(f"ADO array shape {ados.shape} does not match {hierarchy.n_ados} ADOs")
        self.hierarchy = hierarchy
        self.ados = ados

    @classmethod
    def from_density(cls, hierarchy: Hierarchy, rho: np.ndarray) -> "HierarchyState":
        rho = np.asarray(rho, dtype=complex)
        ados = np.zeros((hierarchy.n_ados,) + rho.shape, dtype=complex)
        ados[0] = rho
        return cls(hierarchy, ados)

    @property
    def rho(self) -> np.ndarray:
        return self.ados[0]

    @property
    def dim(self) -> int:
        return self.ados.shape[1]

    def __getitem__(self, idx) -> np.ndarray:
        a = self.hierarchy.lookup[tuple(idx)]
        return self.ados[a] * self.hierarchy.scale[a]

    def __len__(self):
        return self.hierarchy.n_ados

    def copy(self) -> "HierarchyState":
        return HierarchyState(self.hierarchy, self.ados.copy())


def _csr(op) -> sp.csr_matrix:
    m = op.matrix if isinstance(op, OperatorMatrix) else op
    m = sp.csr_matrix(m, dtype=complex)
    m.sum_duplicates()
    m.sort_indices()
    return m


def _stack_csr(ops: Sequence[sp.csr_matrix], dim: int):
    nnz = max(max((o.nnz for o in ops), default=0), 1)
    indptr = np.zeros((len(ops), dim + 1), dtype=np.int64)
    indices = np.zeros((len(ops), nnz), dtype=np.int64)
    data = np.zeros((len(ops), nnz), dtype=complex)
    for b, o in enumerate(ops):
        indptr[b] = o.indptr
        indices[b, : o.nnz] = o.indices
        data[b, : o.nnz] = o.data
    return indptr, indices, data


class _Workspace:
    def __init__(self, dim: int):
        self.a = np.zeros((dim, dim), dtype=complex)
        self.b = np.zeros((dim, dim), dtype=complex)
        self.q = np.zeros((dim, dim), dtype=complex)


class Liouvillian:
    """HEOM generator for fixed coupling operators; the Hamiltonian may change per call."""

    def __init__(self, hierarchy: Hierarchy, couplings: dict, dim: int, hermitian: bool = False):
        self.hierarchy = hierarchy
        self.hermitian = hermitian
        self.dim = dim
        ops = []
        for name in BATHS:
            q = couplings.get(name)
            ops.append(_csr(q) if q is not None else sp.csr_matrix((dim, dim), dtype=complex))
        for o in ops:
            if o.shape != (dim, dim):
                raise ValueError(f"coupling operator shape {o.shape} does not match dimension {dim}")
        self.q_indptr, self.q_indices, self.q_data = _stack_csr(ops, dim)
        # coupling operators are dimensionless; every rate table is in cm^-1
        self.tables = hierarchy.scaled(CM_TO_RAD_FS)
        self.work = _Workspace(dim)

    def __call__(self, ados: np.ndarray, h: sp.csr_matrix, out: np.ndarray) -> np.ndarray:
        """Write d(ados)/dt (per fs) into ``out``; ``h`` in cm^-1."""
        if ados.shape[1] != self.dim or h.shape != (self.dim, self.dim):
            raise ValueError(f"dimension mismatch: state {ados.shape[1]}, Hamiltonian {h.shape}, bath {self.dim}")
        t = self.tables
        if self.hermitian:
            _kernels.heom_rhs_hermitian(
                ados,
                out,
                h.indptr.astype(np.int64),
                h.indices.astype(np.int64),
                h.data * CM_TO_RAD_FS,
                self.q_indptr,
                self.q_indices,
                self.q_data,
                t["damping"],
                t["up"],
                t["down"],
                t["up_coef"],
                t["down_left"],
                t["mode_bath"],
                t["y_left"],
                t["y_right"],
                self.work.a,
                self.work.b,
            )
            return out
        _kernels.heom_rhs_kernel(
            ados,
            out,
            h.indptr.astype(np.int64),
            h.indices.astype(np.int64),
            h.data * CM_TO_RAD_FS,
            self.q_indptr,
            self.q_indices,
            self.q_data,
            t["damping"],
            t["up"],
            t["down"],
            t["up_coef"],
            t["down_left"],
            t["down_right"],
            t["mode_bath"],
            t["y_left"],
            t["y_right"],
            self.work.a,
            self.work.b,
            self.work.q,
        )
        return out


def heom_rhs(state: HierarchyState, h_total, couplings: dict) -> HierarchyState:
    """Time derivative (per fs) of every ADO for the Hamiltonian ``h_total`` (cm^-1).

    ``couplings`` maps ``"tuning"``/``"coupling"`` to the system operators
    the two baths attach to.
    """
    h = _csr(h_total)
    if h.shape != (state.dim, state.dim):
        raise ValueError(f"Hamiltonian shape {h.shape} does not match state dimension {state.dim}")
    liou = Liouvillian(state.hierarchy, couplings, state.dim)
    out = np.empty_like(state.ados)
    liou(np.ascontiguousarray(state.ados), h, out)
    return HierarchyState(state.hierarchy, out)


class DrivenHamiltonian:
    """``H(t) = H0 + g(t) X + conj(g(t)) X^dag`` on a fixed sparsity pattern.

    ``support`` is the half-open interval outside which the drive is treated as zero.
    ``sectors`` lists index arrays that are dynamically independent when the
    drive is off (H0 and the bath operators are block diagonal in them).
    ``max_drive_rate`` bounds the oscillation rate (rad/fs) of ``g`` inside
    the support and sets the number of substeps while the drive is on.
    """

    def __init__(self, h0, drive=None, coefficient: Callable | None = None, support=None, sectors=None, max_drive_rate: float = 0.0):
        h0 = _csr(h0)
        self.dim = h0.shape[0]
        if drive is None:
            drive = sp.csr_matrix((self.dim, self.dim), dtype=complex)
        x = _csr(drive)
        xh = _csr(x.getH())
        pattern = _csr(abs(h0) + abs(x) + abs(xh))
        pattern.data[:] = 1.0
        self.pattern = pattern
        self._h0 = self._aligned(h0)
        self._x = self._aligned(x)
        self._xh = self._aligned(xh)
        self.h0 = h0
        self.drive = x
        self.coefficient = coefficient
        self.support = support
        self.sectors = [np.asarray(s, dtype=np.int64) for s in sectors] if sectors else None
        self.max_drive_rate = max_drive_rate

    def _aligned(self, m: sp.csr_matrix) -> np.ndarray:
        # data of m laid out on the union pattern
        p = self.pattern.tocoo()
        lookup = {(i, j): k for k, (i, j) in enumerate(zip(p.row, p.col))}
        out = np.zeros(self.pattern.nnz, dtype=complex)
        mc = m.tocoo()
        for i, j, v in zip(mc.row, mc.col, mc.data):
            out[lookup[(i, j)]] += v
        # pattern.tocoo() preserves CSR ordering, so positions line up with pattern.data
        return out

    def drive_on(self, t0: float, t1: float) -> bool:
        if self.coefficient is None:
            return False
        if self.support is None:
            return True
        lo, hi = self.support
        return t1 > lo and t0 < hi

    def drive_finished(self, t: float) -> bool:
        """True when the drive is zero from ``t`` onwards."""
        if self.coefficient is None:
            return True
        return self.support is not None and t >= self.support[1]

    def value(self, t: float) -> complex:
        if self.coefficient is None:
            return 0.0
        # half-open so that the drive is exactly zero once drive_finished(t) holds
        if self.support is not None and not (self.support[0] <= t < self.support[1]):
            return 0.0
        return complex(self.coefficient(t))

    def matrix(self, t: float) -> sp.csr_matrix:
        g = self.value(t)
        m = self.pattern.copy()
        m.data = self._h0 + g * self._x + np.conj(g) * self._xh
        return m

    def __call__(self, t: float) -> OperatorMatrix:
        return OperatorMatrix(self.matrix(t), hermitian=True)

    def restricted(self, sector: np.ndarray) -> "DrivenHamiltonian":
        """Drive-free Hamiltonian on one sector."""
        return DrivenHamiltonian(self.h0[sector][:, sector])


@dataclass
class Trajectory:
    times: list
    rhos: list
    steps: int = 0

    def __iter__(self):
        return iter(zip(self.times, self.rhos))

    def __len__(self):
        return len(self.times)


# largest allowed product of a bath rate (rad/fs) and the integration step
STEP_RESOLUTION = 0.1
# largest drive-phase advance (rad) per RK4 substep; the drive enters only
# through the weak transition term, whose phase RK4 samples at half this spacing
DRIVE_RESOLUTION = 0.25


def max_step_rate(hierarchy: Hierarchy, h_of_t: DrivenHamiltonian) -> float:
    """Fastest bath decay rate in rad/fs; this bounds the outer step."""
    return max([m.rate * CM_TO_RAD_FS for m in hierarchy.modes] + [0.0])


def drive_substeps(h_of_t: DrivenHamiltonian, dt: float) -> int:
    """RK4 substeps per outer step while the drive is on, so that each resolves the drive phase."""
    return max(1, math.ceil(dt * h_of_t.max_drive_rate / DRIVE_RESOLUTION * (1 + 1e-12)))


class _Sector:
    def __init__(self, index, hierarchy, couplings, h_of_t):
        self.index = index
        if index is None:
            self.h = h_of_t
            sub = couplings
            dim = h_of_t.dim
        else:
            self.h = h_of_t.restricted(index)
            sub = {k: _csr(v)[index][:, index] for k, v in couplings.items() if v is not None}
            dim = len(index)
        self.liou = Liouvillian(hierarchy, sub, dim, hermitian=True)
        shape = (hierarchy.n_ados, dim, dim)
        self.acc = np.empty(shape, dtype=complex)
        self.stage = np.empty(shape, dtype=complex)
        self.k = np.empty(shape, dtype=complex)

    def step(self, y: np.ndarray, t: float, dt: float) -> np.ndarray:
        h = self.h
        acc, stage, k = self.acc, self.stage, self.k
        acc[...] = y
        self.liou(y, h.matrix(t), k)
        _kernels.rk4_combine(y, k, acc, stage, dt, 1.0 / 6.0, 0.5)
        self.liou(stage, h.matrix(t + 0.5 * dt), k)
        _kernels.rk4_combine(y, k, acc, stage, dt, 1.0 / 3.0, 0.5)
        self.liou(stage, h.matrix(t + 0.5 * dt), k)
        _kernels.rk4_combine(y, k, acc, stage, dt, 1.0 / 3.0, 1.0)
        self.liou(stage, h.matrix(t + dt), k)
        _kernels.rk4_combine(y, k, acc, stage, dt, 1.0 / 6.0, 0.0)
        y[...] = acc
        return y


def propagate(
    initial: HierarchyState,
    h_of_t: DrivenHamiltonian,
    couplings: dict,
    dt: float,
    t_end: float,
    frame_stride: int = 1,
    t_start: float = 0.0,
    trace_tol: float = 1e-6,
    decouple_sectors: bool = True,
    check_rate: bool = True,
    progress: Callable | None = None,
    observer: Callable | None = None,
) -> Trajectory:
    """Fixed-step RK4 propagation of all ADOs; returns tier-0 snapshots.

    ``dt`` must resolve the bath decay rates. While the drive is on, each
    step is split into :func:`drive_substeps` equal RK4 steps so that the
    phase of the drive coefficient is resolved as well.

    Snapshots are taken at ``t_start`` and every ``frame_stride`` steps.
    With ``observer`` the trajectory stores ``observer(t, rho)`` instead of
    the density matrix itself, which keeps long runs small in memory.
    When the drive is off and ``h_of_t.sectors`` is set, each sector is
    propagated on its own and coherences between sectors are discarded;
    they cannot feed back into any sector without the drive.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if frame_stride < 1:
        raise ValueError("frame_stride must be >= 1")
    hier = initial.hierarchy
    if check_rate:
        rate = max_step_rate(hier, h_of_t)
        if dt * rate >= STEP_RESOLUTION:
            raise ValueError(f"dt = {dt} fs does not resolve the fastest rate {rate:.4g} rad/fs (need dt * rate < {STEP_RESOLUTION})")
    n_sub = drive_substeps(h_of_t, dt)
    n_steps = int(round((t_end - t_start) / dt))
    if n_steps < 0:
        raise ValueError("t_end precedes t_start")

    full = None
    split = None
    y = np.ascontiguousarray(initial.ados.copy())
    rho0 = np.zeros((initial.dim, initial.dim), dtype=complex)
    trace0 = np.trace(initial.rho).real
    traj = Trajectory([], [])

    def snapshot(t):
        if split is None:
            rho = y[0].copy()
        else:
            rho = rho0.copy()
            for sec, ys in split:
                rho[np.ix_(sec.index, sec.index)] = ys[0]
        traj.times.append(t)
        traj.rhos.append(rho if observer is None else observer(t, rho))

    snapshot(t_start)
    for s in range(n_steps):
        t = t_start + s * dt
        if not (decouple_sectors and h_of_t.sectors and h_of_t.drive_finished(t)):
            if full is None:
                full = _Sector(None, hier, couplings, h_of_t)
            if n_sub > 1 and h_of_t.drive_on(t, t + dt):
                for j in range(n_sub):
                    full.step(y, t + j * dt / n_sub, dt / n_sub)
            else:
                full.step(y, t, dt)
            states = [y]
        else:
            if split is None:
                split = []
                for idx in h_of_t.sectors:
                    sec = _Sector(idx, hier, couplings, h_of_t)
                    split.append((sec, np.ascontiguousarray(y[:, idx][:, :, idx])))
                full = None
                y = None
            for sec, ys in split:
                sec.step(ys, t, dt)
            states = [ys for _, ys in split]
        t_next = t_start + (s + 1) * dt
        if (s + 1) % frame_stride == 0 or s + 1 == n_steps:
            for st in states:
                if not np.all(np.isfinite(st[0])):
                    raise PropagationError(f"non-finite density matrix at t = {t_next:.6g} fs", time=t_next, frames=list(traj))
            tr = sum(np.trace(st[0]).real for st in states)
            if abs(tr - trace0) > trace_tol:
                raise PropagationError(f"trace drift {tr - trace0:.3e} at t = {t_next:.6g} fs", time=t_next, frames=list(traj))
            if (s + 1) % frame_stride == 0:
                snapshot(t_next)
            if progress is not None:
                progress(t_next)
    traj.steps = n_steps
    return traj
