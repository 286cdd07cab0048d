"""Numpy implementations of the assembly kernels.

Used when the compiled extension is unavailable or ``MG_PURE_PYTHON=1``.
Signatures and results match :mod:`mgalerkin._ckernels`.
"""

import numpy as np


def scatter_add(cell_dofs, elem, ntotal):
    """Sum element contributions ``elem[c, l]`` into a global vector."""
    return np.bincount(cell_dofs.ravel(), weights=elem.ravel(), minlength=ntotal)


def duality_elements(grad, dphi, wq, p):
    """Element vectors of sum_i sgn(g_i)|g_i|^(p-1) d_i(phi_l), and sum_i |g_i|^p.

    grad: (ncell, nq, d) gradient of u at quadrature points
    dphi: (ncell, nq, nloc, d) basis gradients
    wq:   (ncell, nq) physical quadrature weights
    """
    a = np.abs(grad)
    s = np.sign(grad) * a ** (p - 1.0)
    elem = np.einsum("cqd,cqld->cl", s * wq[:, :, None], dphi)
    total = float(np.sum(wq[:, :, None] * a**p))
    return elem, total


def convection_local(w, dw, phi, dphi, wq):
    """Skew-symmetric convection c(w; w, v) and its derivative, per cell.

    c(w; v, z) = 1/2 [((w.grad) v, z) - ((w.grad) z, v)]

    w:    (ncell, nq, 2) velocity values
    dw:   (ncell, nq, 2, 2) velocity gradient, dw[..., a, b] = d_b w_a
    phi:  (nq, nloc) scalar basis values
    dphi: (ncell, nq, nloc, 2) scalar basis gradients

    Returns res (ncell, nloc, 2) with res[c, k, a] = c(w; w, psi_k e_a) and
    jac (ncell, nloc, 2, nloc, 2), the derivative with respect to w in the
    direction psi_l e_b.
    """
    ww = wq[:, :, None] * 0.5
    conv = np.einsum("cqb,cqab->cqa", w, dw)  # (w.grad) w
    wgrad = np.einsum("cqb,cqkb->cqk", w, dphi)  # w.grad psi_k
    res = np.einsum("cq,cqa,qk->cka", ww[:, :, 0], conv, phi)
    res -= np.einsum("cq,cqk,cqa->cka", ww[:, :, 0], wgrad, w)

    wt = ww[:, :, 0]
    eye = np.eye(2)
    # d/dw of ((w.grad) w)_a psi_k: psi_l d_b w_a psi_k + delta_ab (w.grad psi_l) psi_k
    jac = np.einsum("cq,ql,cqab,qk->ckalb", wt, phi, dw, phi)
    jac += np.einsum("cq,cql,qk,ab->ckalb", wt, wgrad, phi, eye)
    # d/dw of -(w.grad psi_k) w_a: -psi_l d_b psi_k w_a - (w.grad psi_k) psi_l delta_ab
    jac -= np.einsum("cq,ql,cqkb,cqa->ckalb", wt, phi, dphi, w)
    jac -= np.einsum("cq,cqk,ql,ab->ckalb", wt, wgrad, phi, eye)
    return res, jac
