# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled batched kernels; see ``_kernels_py`` for the reference semantics.

Both kernels use Hermitian symmetry of the matrices: only the diagonal and the
strict upper triangle are visited.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline double _herm_form(const double complex[:] x, const double complex[:, :] g) noexcept nogil:
    cdef Py_ssize_t d = x.shape[0]
    cdef Py_ssize_t i, j
    cdef double acc = 0.0
    cdef double complex off
    for i in range(d):
        acc += g[i, i].real * (x[i].real * x[i].real + x[i].imag * x[i].imag)
        off = 0.0
        for j in range(i + 1, d):
            off = off + g[i, j] * x[j]
        acc += 2.0 * (x[i].real * off.real + x[i].imag * off.imag)
    return acc


def hermitian_forms(x, g):
    cdef const double complex[:, :] xv = np.ascontiguousarray(x, dtype=np.complex128)
    cdef const double complex[:, :] gv = np.ascontiguousarray(g, dtype=np.complex128)
    cdef Py_ssize_t n = xv.shape[0]
    out = np.empty(n)
    cdef double[:] ov = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            ov[i] = _herm_form(xv[i], gv)
    return out


def score_pieces(r, ginv, gammas, mus):
    cdef const double complex[:, :] rv = np.ascontiguousarray(r, dtype=np.complex128)
    cdef const double complex[:, :] gi = np.ascontiguousarray(ginv, dtype=np.complex128)
    cdef const double complex[:, :, :] gk = np.ascontiguousarray(gammas, dtype=np.complex128)
    cdef const double complex[:, :] mk = np.ascontiguousarray(mus, dtype=np.complex128)
    cdef Py_ssize_t n = rv.shape[0], d = rv.shape[1], L = gk.shape[0]
    eta = np.empty(n)
    lin = np.empty((n, L))
    quad = np.empty((n, L))
    w = np.empty(d, dtype=np.complex128)
    cdef double[:] ev = eta
    cdef double[:, :] lv = lin
    cdef double[:, :] qv = quad
    cdef double complex[:] wv = w
    cdef Py_ssize_t i, a, b, k
    cdef double complex acc
    cdef double e, l
    with nogil:
        for i in range(n):
            e = 0.0
            for a in range(d):
                acc = 0.0
                for b in range(d):
                    acc = acc + gi[a, b] * rv[i, b]
                wv[a] = acc
                e += rv[i, a].real * acc.real + rv[i, a].imag * acc.imag
            ev[i] = 0.5 * e
            for k in range(L):
                l = 0.0
                for a in range(d):
                    l += mk[k, a].real * wv[a].real + mk[k, a].imag * wv[a].imag
                lv[i, k] = l
                qv[i, k] = _herm_form(wv, gk[k])
    return eta, lin, quad
