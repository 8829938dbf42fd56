"""Compiled HEOM right-hand side.

Sparse operators are passed as CSR triplets. Per ADO the work is linear in
the number of stored nonzeros times the matrix dimension, so the cost never
involves a dense matrix product.
"""

from numba import njit


@njit(cache=True)
def _left_csr(indptr, indices, data, x, out, scale):
    # out += scale * (S @ x)
    n = x.shape[0]
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            s = scale * data[p]
            k = indices[p]
            for j in range(n):
                out[i, j] += s * x[k, j]


@njit(cache=True)
def _right_csr(indptr, indices, data, x, out, scale):
    # out += scale * (x @ S)
    n = x.shape[0]
    for i in range(n):
        for k in range(n):
            v = x[i, k]
            if v.real == 0.0 and v.imag == 0.0:
                continue
            v = scale * v
            for p in range(indptr[k], indptr[k + 1]):
                out[i, indices[p]] += v * data[p]


@njit(cache=True)
def heom_rhs_kernel(
    rho,
    out,
    h_indptr,
    h_indices,
    h_data,
    q_indptr,
    q_indices,
    q_data,
    damping,
    up,
    down,
    up_coef,
    down_left,
    down_right,
    mode_bath,
    y_left,
    y_right,
    work_a,
    work_b,
    work_q,
):
    """Fill ``out`` with d(rho)/dt for every ADO.

    rho, out : (N, D, D) complex; time unit is set by the caller's scaling
    h_* : CSR of the Hamiltonian (rad per time unit)
    q_* : (B, ...) stacked CSR of the bath coupling operators
    damping : (N,) sum_k n_k nu_k
    up, down : (N, M) neighbour ADO positions or -1
    up_coef, down_left, down_right : (N, M) scaled hierarchy couplings
    mode_bath : (M,) bath of each exponential mode
    y_left, y_right : (N, B) coefficients of the time-local terms
        Y = y_left Q rho_n - y_right rho_n Q entering as -i [Q, Y]
    """
    n_ado = rho.shape[0]
    n_bath = q_indptr.shape[0]
    n_mode = mode_bath.shape[0]
    dim = rho.shape[1]
    for a in range(n_ado):
        r = rho[a]
        o = out[a]
        g = damping[a]
        for i in range(dim):
            for j in range(dim):
                o[i, j] = -g * r[i, j]
        _left_csr(h_indptr, h_indices, h_data, r, o, -1j)
        _right_csr(h_indptr, h_indices, h_data, r, o, 1j)
        for b in range(n_bath):
            work_a[:, :] = 0.0
            work_b[:, :] = 0.0
            used = False
            for k in range(n_mode):
                if mode_bath[k] != b:
                    continue
                u = up[a, k]
                if u >= 0:
                    c = up_coef[a, k]
                    ru = rho[u]
                    for i in range(dim):
                        for j in range(dim):
                            x = c * ru[i, j]
                            work_a[i, j] += x
                            work_b[i, j] += x
                    used = True
                d = down[a, k]
                if d >= 0:
                    cl = down_left[a, k]
                    cr = down_right[a, k]
                    rd = rho[d]
                    for i in range(dim):
                        for j in range(dim):
                            work_a[i, j] += cl * rd[i, j]
                            work_b[i, j] += cr * rd[i, j]
                    used = True
            yl = y_left[a, b]
            yr = y_right[a, b]
            if yl != 0.0 or yr != 0.0:
                qi = q_indptr[b]
                qx = q_indices[b]
                qd = q_data[b]
                work_q[:, :] = 0.0
                _left_csr(qi, qx, qd, r, work_q, yl)
                _right_csr(qi, qx, qd, r, work_q, -yr)
                for i in range(dim):
                    for j in range(dim):
                        work_a[i, j] += work_q[i, j]
                        work_b[i, j] += work_q[i, j]
                used = True
            if used:
                _left_csr(q_indptr[b], q_indices[b], q_data[b], work_a, o, -1j)
                _right_csr(q_indptr[b], q_indices[b], q_data[b], work_b, o, 1j)


@njit(cache=True)
def rk4_combine(y, k, acc, stage, h, weight, next_scale):
    """acc += weight * h * k ; stage = y + next_scale * h * k."""
    n = y.shape[0]
    d = y.shape[1]
    for a in range(n):
        for i in range(d):
            for j in range(d):
                kv = k[a, i, j]
                acc[a, i, j] += weight * h * kv
                stage[a, i, j] = y[a, i, j] + next_scale * h * kv


@njit(cache=True)
def heom_rhs_hermitian(
    rho,
    out,
    h_indptr,
    h_indices,
    h_data,
    q_indptr,
    q_indices,
    q_data,
    damping,
    up,
    down,
    up_coef,
    down_left,
    mode_bath,
    y_left,
    y_right,
    work_w,
    work_n,
):
    """Same generator as ``heom_rhs_kernel`` restricted to Hermitian ADOs.

    Every term has the form ``Z + Z^dag`` with ``Z`` built from left
    products only: ``-i[H, r] = Z + Z^dag`` for ``Z = -i H r`` and so on.
    The time-local terms need ``y_right == -conj(y_left)`` so that ``Y`` is
    Hermitian; both the residual correction and the Markovian terminator
    satisfy this.
    """
    n_ado = rho.shape[0]
    n_bath = q_indptr.shape[0]
    n_mode = mode_bath.shape[0]
    dim = rho.shape[1]
    for a in range(n_ado):
        r = rho[a]
        z = out[a]
        z[:, :] = 0.0
        _left_csr(h_indptr, h_indices, h_data, r, z, -1j)
        for b in range(n_bath):
            used = False
            work_w[:, :] = 0.0
            for k in range(n_mode):
                if mode_bath[k] != b:
                    continue
                u = up[a, k]
                if u >= 0:
                    c = up_coef[a, k]
                    ru = rho[u]
                    for i in range(dim):
                        for j in range(dim):
                            work_w[i, j] += c * ru[i, j]
                    used = True
                d = down[a, k]
                if d >= 0:
                    c = down_left[a, k]
                    rd = rho[d]
                    for i in range(dim):
                        for j in range(dim):
                            work_w[i, j] += c * rd[i, j]
                    used = True
            yl = y_left[a, b]
            yr = y_right[a, b]
            if yl != 0.0 or yr != 0.0:
                # Y = yl Q r - yr r Q = yl N - yr N^dag, N = Q r
                work_n[:, :] = 0.0
                _left_csr(q_indptr[b], q_indices[b], q_data[b], r, work_n, 1.0)
                for i in range(dim):
                    for j in range(dim):
                        work_w[i, j] += yl * work_n[i, j] - yr * work_n[j, i].conjugate()
                used = True
            if used:
                _left_csr(q_indptr[b], q_indices[b], q_data[b], work_w, z, -1j)
        g = damping[a].real
        for i in range(dim):
            for j in range(i, dim):
                v = z[i, j] + z[j, i].conjugate()
                w = v - g * r[i, j]
                z[i, j] = w
                z[j, i] = w.conjugate()
