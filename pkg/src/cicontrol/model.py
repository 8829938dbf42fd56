"""Three-state, two-mode linear vibronic coupling model.

Electronic states ``g``, ``e1``, ``e2`` are dressed by a tuning mode ``Q_t``
(linear gap-tuning coupling ``kappa_i Q_t`` on each excited state) and a
coupling mode ``Q_c`` (Peierls-type interstate coupling ``V0 + Lambda Q_c``).
All coordinates are dimensionless and mass weighted, ``Q = (a + a^dag)/sqrt(2)``,
so that ``h_g = sum_i Omega_i/2 (P_i^2 + Q_i^2)``. Energies are in cm^-1.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np
import scipy.sparse as sp

ELECTRONIC_STATES = ("g", "e1", "e2")
MAX_DIMENSION = 4096


@dataclass(frozen=True)
class ModelParams:
    """Molecular Hamiltonian constants and basis truncation.

    ``dipole`` is the g<->e2 transition dipole folded with the field
    polarisation, so that ``dipole * field`` is an energy in cm^-1.
    """

    omega_t: float = 300.0
    omega_c: float = 150.0
    delta1: float = -2.357
    delta2: float = 2.357
    eps1: float = 15000.0
    eps2: float = 16000.0
    v0: float = 0.0
    lambda_peierls: float = 200.0
    dipole: float = 1.0
    n_t: int = 24
    n_c: int = 4

    def __post_init__(self):
        if not (self.omega_t > 0 and self.omega_c > 0):
            raise ValueError("mode frequencies must be positive")
        if self.n_t < 2 or self.n_c < 2:
            raise ValueError(f"basis sizes must be >= 2, got n_t={self.n_t}, n_c={self.n_c}")
        if self.kappa2 - self.kappa1 == 0.0:
            raise ValueError("kappa1 == kappa2: the diabatic surfaces never cross along Q_t")

    @property
    def kappa1(self) -> float:
        return self.delta1 * self.omega_t / math.sqrt(2.0)

    @property
    def kappa2(self) -> float:
        return self.delta2 * self.omega_t / math.sqrt(2.0)

    @property
    def gap(self) -> float:
        return self.eps2 - self.eps1

    @property
    def vertical_gap(self) -> float:
        """e2 - g energy difference at the Franck-Condon point, <0|kappa2 Q_t|0> = 0."""
        return self.eps2

    def replace(self, **changes) -> "ModelParams":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return ModelParams(**values)


@dataclass(frozen=True)
class VibronicBasis:
    """Product basis electronic x tuning Fock x coupling Fock.

    The flat index is ``(e * n_t + n) * n_c + m``.
    """

    n_t: int
    n_c: int
    labels: tuple = ELECTRONIC_STATES

    @property
    def n_el(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.n_el * self.n_t * self.n_c

    @property
    def block(self) -> int:
        """Dimension of one electronic block."""
        return self.n_t * self.n_c

    def index(self, e, n: int, m: int) -> int:
        if isinstance(e, str):
            e = self.labels.index(e)
        if not (0 <= e < self.n_el and 0 <= n < self.n_t and 0 <= m < self.n_c):
            raise IndexError((e, n, m))
        return (e * self.n_t + n) * self.n_c + m

    def state(self, i: int) -> tuple[int, int, int]:
        if not 0 <= i < self.dim:
            raise IndexError(i)
        e, rest = divmod(i, self.block)
        n, m = divmod(rest, self.n_c)
        return e, n, m

    def slice_of(self, e) -> slice:
        if isinstance(e, str):
            e = self.labels.index(e)
        return slice(e * self.block, (e + 1) * self.block)


@dataclass(frozen=True)
class OperatorMatrix:
    """Sparse square operator over a vibronic basis."""

    matrix: sp.csr_matrix
    hermitian: bool = False

    def __post_init__(self):
        m = sp.csr_matrix(self.matrix, dtype=complex)
        m.sum_duplicates()
        m.sort_indices()
        object.__setattr__(self, "matrix", m)
        if m.shape[0] != m.shape[1]:
            raise ValueError(f"operator must be square, got {m.shape}")
        if self.hermitian:
            diff = abs(m - m.getH())
            if diff.nnz and diff.max() > 1e-12:
                raise ValueError("operator flagged Hermitian is not Hermitian")

    @property
    def shape(self):
        return self.matrix.shape

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def __matmul__(self, other):
        return self.matrix @ other


def build_basis(params: ModelParams, max_dim: int = MAX_DIMENSION) -> VibronicBasis:
    dim = len(ELECTRONIC_STATES) * params.n_t * params.n_c
    if dim > max_dim:
        raise ValueError(f"basis dimension {dim} exceeds the configured maximum {max_dim}")
    return VibronicBasis(params.n_t, params.n_c)


def ladder(n: int) -> np.ndarray:
    """Annihilation operator on an n-level Fock space."""
    return np.diag(np.sqrt(np.arange(1, n, dtype=float)), 1)


def fock_position(n: int) -> np.ndarray:
    a = ladder(n)
    return (a + a.T) / math.sqrt(2.0)


def fock_momentum(n: int) -> np.ndarray:
    a = ladder(n)
    return 1j * (a.T - a) / math.sqrt(2.0)


def _embed(basis: VibronicBasis, el: np.ndarray, tuning: np.ndarray, coupling: np.ndarray):
    return sp.kron(sp.kron(sp.csr_matrix(el), sp.csr_matrix(tuning)), sp.csr_matrix(coupling), format="csr")


def _projector(basis: VibronicBasis, a, b=None) -> np.ndarray:
    b = a if b is None else b
    p = np.zeros((basis.n_el, basis.n_el))
    p[basis.labels.index(a), basis.labels.index(b)] = 1.0
    return p


def position_operator(mode: str, basis: VibronicBasis) -> OperatorMatrix:
    """Dimensionless coordinate of the ``tuning`` or ``coupling`` mode on the full basis."""
    el = np.eye(basis.n_el)
    if mode == "tuning":
        m = _embed(basis, el, fock_position(basis.n_t), np.eye(basis.n_c))
    elif mode == "coupling":
        m = _embed(basis, el, np.eye(basis.n_t), fock_position(basis.n_c))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return OperatorMatrix(m, hermitian=True)


def momentum_operator(mode: str, basis: VibronicBasis) -> OperatorMatrix:
    el = np.eye(basis.n_el)
    if mode == "tuning":
        m = _embed(basis, el, fock_momentum(basis.n_t), np.eye(basis.n_c))
    elif mode == "coupling":
        m = _embed(basis, el, np.eye(basis.n_t), fock_momentum(basis.n_c))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return OperatorMatrix(m, hermitian=True)


def number_operator(mode: str, basis: VibronicBasis) -> OperatorMatrix:
    el = np.eye(basis.n_el)
    if mode == "tuning":
        m = _embed(basis, el, np.diag(np.arange(basis.n_t, dtype=float)), np.eye(basis.n_c))
    elif mode == "coupling":
        m = _embed(basis, el, np.eye(basis.n_t), np.diag(np.arange(basis.n_c, dtype=float)))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return OperatorMatrix(m, hermitian=True)


def electronic_projector(label: str, basis: VibronicBasis) -> OperatorMatrix:
    m = _embed(basis, _projector(basis, label), np.eye(basis.n_t), np.eye(basis.n_c))
    return OperatorMatrix(m, hermitian=True)


def transition_operator(basis: VibronicBasis, upper: str = "e2", lower: str = "g") -> OperatorMatrix:
    """``|upper><lower|`` times the identity on both modes (Condon approximation)."""
    m = _embed(basis, _projector(basis, upper, lower), np.eye(basis.n_t), np.eye(basis.n_c))
    return OperatorMatrix(m)


def build_hamiltonian(params: ModelParams, basis: VibronicBasis, energy_shift=None) -> OperatorMatrix:
    """Molecular Hamiltonian in cm^-1.

    The harmonic part is the exact number-operator diagonal
    ``Omega (n + 1/2)``, which equals ``Omega/2 (P^2 + Q^2)`` away from the
    truncation edge. ``energy_shift`` optionally maps an electronic label to
    a constant subtracted from that block (used for rotating frames).
    """
    nt, nc = basis.n_t, basis.n_c
    ladder_t = params.omega_t * (np.arange(nt) + 0.5)
    ladder_c = params.omega_c * (np.arange(nc) + 0.5)
    hg_diag = (ladder_t[:, None] + ladder_c[None, :]).ravel()
    qt = sp.kron(sp.csr_matrix(fock_position(nt)), sp.identity(nc), format="csr")
    qc = sp.kron(sp.identity(nt), sp.csr_matrix(fock_position(nc)), format="csr")
    hg = sp.diags(hg_diag)
    ident = sp.identity(basis.block)
    shift = dict(energy_shift or {})

    blocks = [[None] * 3 for _ in range(3)]
    blocks[0][0] = hg - shift.get("g", 0.0) * ident
    blocks[1][1] = hg + (params.eps1 - shift.get("e1", 0.0)) * ident + params.kappa1 * qt
    blocks[2][2] = hg + (params.eps2 - shift.get("e2", 0.0)) * ident + params.kappa2 * qt
    coupling = params.v0 * ident + params.lambda_peierls * qc
    blocks[1][2] = coupling
    blocks[2][1] = coupling
    return OperatorMatrix(sp.bmat(blocks, format="csr"), hermitian=True)


def locate_ci(params: ModelParams) -> float:
    """Q_t where the two diabatic excited surfaces cross at Q_c = 0."""
    slope = params.kappa2 - params.kappa1
    if slope == 0.0:
        raise ValueError("degenerate slopes: kappa1 == kappa2")
    return (params.eps1 - params.eps2) / slope


@dataclass(frozen=True)
class Surfaces:
    q: np.ndarray
    ground: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def adiabatic_surfaces(params: ModelParams, q_grid: Sequence[float], q_c: float = 0.0) -> Surfaces:
    """Ground and lower/upper adiabatic excited curves along Q_t at fixed Q_c."""
    q = np.asarray(q_grid, dtype=float)
    if q.size == 0:
        raise ValueError("empty q grid")
    vg = 0.5 * params.omega_t * q**2 + 0.5 * params.omega_c * q_c**2
    d1 = params.eps1 + vg + params.kappa1 * q
    d2 = params.eps2 + vg + params.kappa2 * q
    v = params.v0 + params.lambda_peierls * q_c
    mean = 0.5 * (d1 + d2)
    half = np.sqrt((0.5 * (d1 - d2)) ** 2 + v**2)
    return Surfaces(q, vg, mean - half, mean + half)


def write_surfaces_csv(surfaces: Surfaces, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["q", "ground", "lower", "upper"])
        for row in zip(surfaces.q, surfaces.ground, surfaces.lower, surfaces.upper):
            w.writerow([repr(float(x)) for x in row])


def ground_state(params: ModelParams, basis: VibronicBasis) -> np.ndarray:
    """Density matrix of |g> x |0_t> x |0_c>."""
    rho = np.zeros((basis.dim, basis.dim), dtype=complex)
    i = basis.index("g", 0, 0)
    rho[i, i] = 1.0
    return rho


def electronic_populations(rho: np.ndarray, basis: VibronicBasis) -> dict:
    diag = np.real(np.diagonal(rho))
    return {lab: float(diag[basis.slice_of(lab)].sum()) for lab in basis.labels}
