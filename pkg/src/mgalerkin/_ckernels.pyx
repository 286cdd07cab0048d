# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled assembly kernels; see :mod:`mgalerkin._pykernels` for the contract."""

import numpy as np
from libc.math cimport fabs, pow


def scatter_add(const long[:, ::1] cell_dofs, const double[:, ::1] elem, Py_ssize_t ntotal):
    cdef Py_ssize_t c, l
    out = np.zeros(ntotal)
    cdef double[::1] o = out
    for c in range(cell_dofs.shape[0]):
        for l in range(cell_dofs.shape[1]):
            o[cell_dofs[c, l]] += elem[c, l]
    return out


def duality_elements(const double[:, :, ::1] grad, const double[:, :, :, ::1] dphi,
                     const double[:, ::1] wq, double p):
    cdef Py_ssize_t nc = dphi.shape[0], nq = dphi.shape[1]
    cdef Py_ssize_t nl = dphi.shape[2], nd = dphi.shape[3]
    cdef Py_ssize_t c, q, l, i
    cdef double g, a, s, w, acc, total = 0.0
    cdef double sv[3]
    elem = np.zeros((nc, nl))
    cdef double[:, ::1] e = elem
    for c in range(nc):
        for q in range(nq):
            w = wq[c, q]
            for i in range(nd):
                g = grad[c, q, i]
                a = fabs(g)
                if a == 0.0:
                    sv[i] = 0.0
                else:
                    s = pow(a, p - 1.0)
                    sv[i] = s if g > 0.0 else -s
                    total += w * s * a
            for l in range(nl):
                acc = 0.0
                for i in range(nd):
                    acc += sv[i] * dphi[c, q, l, i]
                e[c, l] += w * acc
    return elem, total


def convection_local(const double[:, :, ::1] w, const double[:, :, :, ::1] dw,
                     const double[:, ::1] phi, const double[:, :, :, ::1] dphi,
                     const double[:, ::1] wq):
    cdef Py_ssize_t nc = dphi.shape[0], nq = dphi.shape[1], nl = dphi.shape[2]
    cdef Py_ssize_t c, q, k, l, a, b
    cdef double wt, pk, pl, wgk, wgl
    cdef double conv[2]
    res = np.zeros((nc, nl, 2))
    jac = np.zeros((nc, nl, 2, nl, 2))
    cdef double[:, :, ::1] r = res
    cdef double[:, :, :, :, ::1] J = jac
    for c in range(nc):
        for q in range(nq):
            wt = 0.5 * wq[c, q]
            for a in range(2):
                conv[a] = w[c, q, 0] * dw[c, q, a, 0] + w[c, q, 1] * dw[c, q, a, 1]
            for k in range(nl):
                pk = phi[q, k]
                wgk = w[c, q, 0] * dphi[c, q, k, 0] + w[c, q, 1] * dphi[c, q, k, 1]
                for a in range(2):
                    r[c, k, a] += wt * (conv[a] * pk - wgk * w[c, q, a])
                for l in range(nl):
                    pl = phi[q, l]
                    wgl = w[c, q, 0] * dphi[c, q, l, 0] + w[c, q, 1] * dphi[c, q, l, 1]
                    for a in range(2):
                        for b in range(2):
                            J[c, k, a, l, b] += wt * (
                                pl * dw[c, q, a, b] * pk
                                - pl * dphi[c, q, k, b] * w[c, q, a]
                            )
                        J[c, k, a, l, a] += wt * (wgl * pk - wgk * pl)
    return res, jac
