import math

import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import given, settings, strategies as st

from cicontrol.model import (
    ModelParams,
    adiabatic_surfaces,
    build_basis,
    build_hamiltonian,
    electronic_populations,
    fock_momentum,
    fock_position,
    ground_state,
    locate_ci,
    position_operator,
    write_surfaces_csv,
)

DEFAULT = ModelParams()


def test_basis_dimension():
    assert build_basis(ModelParams(n_t=2, n_c=2)).dim == 12
    assert build_basis(ModelParams(n_t=24, n_c=4)).dim == 288


def test_basis_rejects_small_truncation():
    with pytest.raises(ValueError):
        ModelParams(n_t=1)


def test_basis_rejects_oversized():
    with pytest.raises(ValueError):
        build_basis(ModelParams(n_t=400, n_c=8))


def test_basis_index_bijection():
    b = build_basis(ModelParams(n_t=5, n_c=3))
    seen = set()
    for i in range(b.dim):
        e, n, m = b.state(i)
        assert b.index(e, n, m) == i
        seen.add((e, n, m))
    assert len(seen) == b.dim


def test_position_operator_two_level_block():
    q = fock_position(2)
    assert q[0, 1] == pytest.approx(1 / math.sqrt(2))
    assert q[1, 0] == pytest.approx(1 / math.sqrt(2))


def test_position_ground_moments():
    b = build_basis(ModelParams(n_t=6, n_c=3))
    q = position_operator("tuning", b).toarray()
    psi = np.zeros(b.dim)
    psi[b.index("g", 0, 0)] = 1
    assert psi @ q @ psi == pytest.approx(0.0)
    assert psi @ q @ q @ psi == pytest.approx(0.5)


def test_position_operator_structure():
    b = build_basis(ModelParams(n_t=5, n_c=3))
    q = position_operator("tuning", b).toarray()
    for i in range(b.dim):
        for j in range(b.dim):
            if q[i, j] != 0:
                ei, ni, mi = b.state(i)
                ej, nj, mj = b.state(j)
                assert ei == ej and mi == mj and abs(ni - nj) == 1
    assert np.allclose(q, q.conj().T, atol=1e-12)


@pytest.mark.parametrize("n", [3, 6, 12])
def test_canonical_commutator_interior(n):
    q, p = fock_position(n), fock_momentum(n)
    comm = q @ p - p @ q
    interior = slice(0, n - 1)
    assert np.allclose(comm[interior, interior], 1j * np.eye(n - 1), atol=1e-12)


def test_kappa_from_default_shifts():
    p = ModelParams(delta1=-2.357, delta2=2.357, omega_t=300)
    assert p.kappa1 == pytest.approx(-500.0, abs=0.1)
    assert p.kappa2 == pytest.approx(500.0, abs=0.1)


def test_diabatic_minima_positions():
    p = DEFAULT
    # minimum of Omega/2 q^2 + kappa q
    assert -p.kappa1 / p.omega_t == pytest.approx(1.667, abs=1e-3)
    assert -p.kappa2 / p.omega_t == pytest.approx(-1.667, abs=1e-3)
    q = np.linspace(-4, 4, 80001)

    d2 = p.eps2 + 0.5 * p.omega_t * q**2 + p.kappa2 * q
    assert q[np.argmin(d2)] == pytest.approx(-1.667, abs=1e-3)


def test_uncoupled_spectrum_is_oscillator_ladder():
    p = ModelParams(delta1=0.0, delta2=1e-9, lambda_peierls=0.0, v0=0.0, n_t=5, n_c=3, eps1=1000.0, eps2=2500.0)
    b = build_basis(p)
    w = np.sort(la.eigvalsh(build_hamiltonian(p, b).toarray()))
    expected = []
    for eps in (0.0, p.eps1, p.eps2):
        for n in range(p.n_t):
            for m in range(p.n_c):
                expected.append(eps + p.omega_t * (n + 0.5) + p.omega_c * (m + 0.5))
    assert np.allclose(w, np.sort(expected), rtol=1e-9)


@settings(max_examples=25, deadline=None)
@given(
    d1=st.floats(-3, 3),
    d2=st.floats(-3, 3),
    lam=st.floats(0, 400),
    v0=st.floats(-200, 200),
    eps=st.floats(-2000, 2000),
)
def test_hamiltonian_hermitian(d1, d2, lam, v0, eps):
    if d1 == d2:
        d2 = d1 + 0.1
    p = ModelParams(delta1=d1, delta2=d2, lambda_peierls=lam, v0=v0, eps2=DEFAULT.eps1 + eps, n_t=6, n_c=3)
    h = build_hamiltonian(p, build_basis(p)).toarray()
    assert np.max(np.abs(h - h.conj().T)) <= 1e-12


def test_locate_ci_default_value():
    assert locate_ci(DEFAULT) == pytest.approx(-1.0, abs=1e-3)


def test_locate_ci_symmetric_and_antisymmetric():
    assert locate_ci(DEFAULT.replace(eps2=DEFAULT.eps1)) == 0.0
    flipped = DEFAULT.replace(delta1=-DEFAULT.delta1, delta2=-DEFAULT.delta2)
    assert locate_ci(flipped) == pytest.approx(-locate_ci(DEFAULT))


def test_locate_ci_degenerate_slopes():
    with pytest.raises(ValueError):
        ModelParams(delta1=1.0, delta2=1.0)


@pytest.mark.parametrize("gap", [200.0, 600.0, 1000.0, 1400.0])
def test_locate_ci_matches_surface_gap_minimum(gap):
    p = DEFAULT.replace(eps2=DEFAULT.eps1 + gap)
    q = np.linspace(-4, 4, 8001)
    s = adiabatic_surfaces(p, q)
    q_min = q[np.argmin(s.upper - s.lower)]
    assert abs(q_min - locate_ci(p)) <= q[1] - q[0]


def test_surface_degeneracy_and_avoided_crossing():
    qs = locate_ci(DEFAULT)
    s = adiabatic_surfaces(DEFAULT, [qs])
    assert s.upper[0] - s.lower[0] == pytest.approx(0.0, abs=1e-9)
    s = adiabatic_surfaces(DEFAULT.replace(v0=50.0), [qs])
    assert s.upper[0] - s.lower[0] == pytest.approx(100.0)


def test_lower_surface_minima_near_default_values():
    q = np.linspace(-4, 4, 16001)
    lower = adiabatic_surfaces(DEFAULT, q).lower
    left = q[q < -1][np.argmin(lower[q < -1])]
    right = q[q > -1][np.argmin(lower[q > -1])]
    assert left == pytest.approx(-1.8, abs=0.15)
    assert right == pytest.approx(1.7, abs=0.15)


def test_surfaces_reject_empty_grid():
    with pytest.raises(ValueError):
        adiabatic_surfaces(DEFAULT, [])


def test_surfaces_csv(tmp_path):
    s = adiabatic_surfaces(DEFAULT, np.linspace(-1, 1, 5))
    path = tmp_path / "s.csv"
    write_surfaces_csv(s, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "q,ground,lower,upper"
    assert len(lines) == 6
    assert float(lines[3].split(",")[0]) == 0.0


def test_ground_state_properties():
    p = ModelParams(n_t=8, n_c=3)
    b = build_basis(p)
    rho = ground_state(p, b)
    assert np.trace(rho).real == pytest.approx(1.0)
    assert np.trace(rho @ rho).real == pytest.approx(1.0)
    h = build_hamiltonian(p, b).toarray()
    assert np.trace(h @ rho).real == pytest.approx((p.omega_t + p.omega_c) / 2)
    for mode in ("tuning", "coupling"):
        assert np.trace(position_operator(mode, b).toarray() @ rho).real == pytest.approx(0.0)
    assert electronic_populations(rho, b) == {"g": 1.0, "e1": 0.0, "e2": 0.0}
