"""Compiled inner loops for the RK4 integrator.

The effective Hamiltonian is passed in CSR form whose data is rebuilt at every
stage time from ``coeff_data`` (row 0 static, then one raising/lowering row
pair per detuning).  Jump operators are partial permutations ``src -> dst``.
"""
import numba
import numpy as np


@numba.njit(cache=True)
def _fill_data(t, detunings, coeff_data, data):
    nd = detunings.shape[0]
    nnz = data.shape[0]
    for p in range(nnz):
        data[p] = coeff_data[0, p]
    for d in range(nd):
        ph = np.exp(1j * detunings[d] * t)
        phc = np.conj(ph)
        up = coeff_data[1 + 2 * d]
        down = coeff_data[2 + 2 * d]
        for p in range(nnz):
            data[p] += ph * up[p] + phc * down[p]


@numba.njit(cache=True)
def _rhs(data, indptr, indices, rho, jsrc, jdst, jrate, X, out):
    n = rho.shape[0]
    for i in range(n):
        for c in range(n):
            X[i, c] = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            v = data[p]
            r = indices[p]
            for c in range(n):
                X[i, c] += v * rho[r, c]
    for i in range(n):
        for c in range(i, n):
            z = -1j * (X[i, c] - np.conj(X[c, i]))
            out[i, c] = z
            out[c, i] = np.conj(z)
    m = jsrc.shape[1]
    for q in range(jsrc.shape[0]):
        g = jrate[q]
        src = jsrc[q]
        dst = jdst[q]
        for a in range(m):
            for b in range(m):
                out[dst[a], dst[b]] += g * rho[src[a], src[b]]


@numba.njit(cache=True)
def rhs(t, rho, detunings, coeff_data, indptr, indices, jsrc, jdst, jrate):
    n = rho.shape[0]
    data = np.empty(coeff_data.shape[1], dtype=np.complex128)
    _fill_data(t, detunings, coeff_data, data)
    X = np.empty((n, n), dtype=np.complex128)
    out = np.empty((n, n), dtype=np.complex128)
    _rhs(data, indptr, indices, rho, jsrc, jdst, jrate, X, out)
    return out


@numba.njit(cache=True)
def advance(rho, t0, h, n_steps, detunings, coeff_data, indptr, indices, jsrc, jdst, jrate):
    """Take ``n_steps`` RK4 steps from local time ``t0``; re-Hermitize each step.

    Returns the new state and the largest trace deviation from 1 seen.
    """
    n = rho.shape[0]
    data = np.empty(coeff_data.shape[1], dtype=np.complex128)
    X = np.empty((n, n), dtype=np.complex128)
    k1 = np.empty((n, n), dtype=np.complex128)
    k2 = np.empty((n, n), dtype=np.complex128)
    k3 = np.empty((n, n), dtype=np.complex128)
    k4 = np.empty((n, n), dtype=np.complex128)
    tmp = np.empty((n, n), dtype=np.complex128)
    cur = rho.copy()
    drift = 0.0
    for s in range(n_steps):
        t = t0 + s * h
        _fill_data(t, detunings, coeff_data, data)
        _rhs(data, indptr, indices, cur, jsrc, jdst, jrate, X, k1)
        _fill_data(t + 0.5 * h, detunings, coeff_data, data)
        for i in range(n):
            for c in range(n):
                tmp[i, c] = cur[i, c] + 0.5 * h * k1[i, c]
        _rhs(data, indptr, indices, tmp, jsrc, jdst, jrate, X, k2)
        for i in range(n):
            for c in range(n):
                tmp[i, c] = cur[i, c] + 0.5 * h * k2[i, c]
        _rhs(data, indptr, indices, tmp, jsrc, jdst, jrate, X, k3)
        _fill_data(t + h, detunings, coeff_data, data)
        for i in range(n):
            for c in range(n):
                tmp[i, c] = cur[i, c] + h * k3[i, c]
        _rhs(data, indptr, indices, tmp, jsrc, jdst, jrate, X, k4)
        for i in range(n):
            for c in range(n):
                cur[i, c] += (h / 6.0) * (k1[i, c] + 2.0 * k2[i, c] + 2.0 * k3[i, c] + k4[i, c])
        tr = 0.0
        for i in range(n):
            cur[i, i] = cur[i, i].real
            tr += cur[i, i].real
            for c in range(i + 1, n):
                z = 0.5 * (cur[i, c] + np.conj(cur[c, i]))
                cur[i, c] = z
                cur[c, i] = np.conj(z)
        d = abs(tr - 1.0)
        if d > drift:
            drift = d
    return cur, drift
