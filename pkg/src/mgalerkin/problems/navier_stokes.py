"""Steady 2D Navier-Stokes on the unit square with Taylor-Hood (P2/P1) elements.

Velocities are posed on the discrete divergence-free subspace: the columns
of ``Z`` span the null space of the discrete divergence on interior
velocity dofs and are orthonormal in the H^1_0 seminorm, so trial
coordinates y give u = Z y with ||grad u|| = |y|.  Inhomogeneous boundary
data enter through a discrete Stokes lift u_ext, and the unknown total
velocity is w = u_ext + Z y.

Full velocity vectors are component-major, [w_x(all nodes), w_y(all nodes)],
on the P2 lattice including boundary nodes.  Pressures are P1 values at
the mesh vertices.
"""

from __future__ import annotations

from functools import cached_property, lru_cache
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from mgalerkin import kernels
from mgalerkin.errors import ConfigurationError, UnstablePairError
from mgalerkin.fnspace import DiscreteSpace, locate, shape_functions, unit_mesh
from mgalerkin.operator import EuclideanSpace, OperatorProblem, TestMap

INFSUP_THRESHOLD = 0.2


def regularized_lid(points: np.ndarray, speed: float = 1.0) -> np.ndarray:
    """Lid velocity 16 x^2 (1 - x)^2 on y = 1, zero on the other walls."""
    x, y = points[:, 0], points[:, 1]
    out = np.zeros_like(points)
    top = np.isclose(y, 1.0)
    out[top, 0] = speed * 16.0 * x[top] ** 2 * (1.0 - x[top]) ** 2
    return out


def classic_lid(points: np.ndarray, speed: float = 1.0) -> np.ndarray:
    """Unit lid speed on the open top edge (corners held at zero)."""
    x, y = points[:, 0], points[:, 1]
    out = np.zeros_like(points)
    top = np.isclose(y, 1.0) & (x > 1e-12) & (x < 1.0 - 1e-12)
    out[top, 0] = speed
    return out


def _coo(rows, cols, vals, shape) -> sp.csr_matrix:
    return sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()


class TaylorHood:
    """Mesh-level data of the P2/P1 pair: matrices, divergence-free basis, quadrature."""

    def __init__(self, refinement: int):
        if refinement < 1:
            raise ConfigurationError("Taylor-Hood cavity needs refinement >= 1")
        self.refinement = refinement
        self.mesh = unit_mesh(2, 2**refinement)
        self.V = DiscreteSpace(self.mesh, 2)
        V = self.V
        self.n = V.ntotal
        self.np = len(self.mesh.vertices)
        self.psi = shape_functions(2, 1, V.qpoints)[0]  # P1 values at P2 quadrature points
        self.pdofs = self.mesh.cells
        v = self.mesh.vertices[self.mesh.cells]
        jac = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)
        jinv_t = np.transpose(np.linalg.inv(jac), (0, 2, 1))
        g = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        self.dpsi = np.einsum("cij,lj->cli", jinv_t, g)  # (nc, 3, 2), constant per cell
        self.free = np.concatenate([V.free_nodes, self.n + V.free_nodes])
        bnodes = np.flatnonzero(V.node_boundary)
        self.boundary_nodes = bnodes
        self.bdofs = np.concatenate([bnodes, self.n + bnodes])

    # -- assembled matrices ------------------------------------------------
    def _vec_dofs(self):
        cd = self.V.cell_dofs
        return np.stack([cd, cd + self.n], axis=2)  # (nc, nloc, 2)

    @cached_property
    def scalar_stiffness(self) -> sp.csr_matrix:
        V = self.V
        local = np.einsum("cq,cqkd,cqld->ckl", V.wq, V.dphi, V.dphi)
        nl = V.cell_dofs.shape[1]
        rows = np.repeat(V.cell_dofs[:, :, None], nl, axis=2)
        cols = np.repeat(V.cell_dofs[:, None, :], nl, axis=1)
        return _coo(rows, cols, local, (self.n, self.n))

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        """Vector Laplacian (grad w, grad v) on all velocity dofs."""
        Ks = self.scalar_stiffness
        return sp.block_diag([Ks, Ks], format="csr")

    @cached_property
    def K_ff(self) -> sp.csr_matrix:
        return self.stiffness[self.free][:, self.free].tocsr()

    @cached_property
    def divergence(self) -> sp.csr_matrix:
        """B[i, (a, k)] = int psi_i d_a phi_k for P1 psi_i and P2 phi_k."""
        V = self.V
        local = np.einsum("cq,qi,cqka->cika", V.wq, self.psi, V.dphi)  # (nc, 3, nloc, 2)
        nl = V.cell_dofs.shape[1]
        rows = np.broadcast_to(self.pdofs[:, :, None, None], local.shape)
        cols = np.broadcast_to(self._vec_dofs()[:, None, :, :], (len(local), 3, nl, 2))
        return _coo(rows, cols, local, (self.np, 2 * self.n))

    @cached_property
    def B_f(self) -> sp.csr_matrix:
        return self.divergence[:, self.free].tocsr()

    @cached_property
    def pressure_mass(self) -> sp.csr_matrix:
        local = np.einsum("cq,qi,qj->cij", self.V.wq, self.psi, self.psi)
        rows = np.repeat(self.pdofs[:, :, None], 3, axis=2)
        cols = np.repeat(self.pdofs[:, None, :], 3, axis=1)
        return _coo(rows, cols, local, (self.np, self.np))

    @cached_property
    def pressure_weights(self) -> np.ndarray:
        """m_i = int psi_i, so that int p = m @ p."""
        return np.asarray(self.pressure_mass.sum(axis=1)).ravel()

    @cached_property
    def Z(self) -> np.ndarray:
        """Divergence-free basis on free velocity dofs, orthonormal in (grad ., grad .)."""
        Z = scipy.linalg.null_space(self.B_f.toarray())
        if Z.shape[1] == 0:
            raise ConfigurationError("empty discrete divergence-free space")
        G = Z.T @ (self.K_ff @ Z)
        L = np.linalg.cholesky(0.5 * (G + G.T))
        return scipy.linalg.solve_triangular(L, Z.T, lower=True).T

    # -- fields --------------------------------------------------------------
    def boundary_vector(self, data: Callable) -> np.ndarray:
        """Full velocity vector with ``data`` at boundary nodes and zero inside."""
        pts = self.V.node_coords[self.boundary_nodes]
        vals = np.asarray(data(pts), dtype=float).reshape(len(pts), 2)
        out = np.zeros(2 * self.n)
        out[self.boundary_nodes] = vals[:, 0]
        out[self.n + self.boundary_nodes] = vals[:, 1]
        return out

    def stokes_extension(self, data: Callable) -> np.ndarray:
        """Discretely divergence-free Stokes lift of the boundary data.

        Solves the saddle system with a Lagrange multiplier fixing the mean
        pressure; returns the full velocity vector.
        """
        e = self.boundary_vector(data)
        if not np.any(e):
            return e
        K, B, f, b = self.stiffness, self.divergence, self.free, self.bdofs
        m = self.pressure_weights
        nf = len(f)
        A = sp.bmat(
            [
                [self.K_ff, self.B_f.T, None],
                [self.B_f, None, sp.csr_matrix(m[:, None])],
                [None, sp.csr_matrix(m[None, :]), None],
            ],
            format="csc",
        )
        rhs = np.concatenate([-(K[f][:, b] @ e[b]), -(B[:, b] @ e[b]), [0.0]])
        sol = spla.spsolve(A, rhs)
        out = e.copy()
        out[f] = sol[:nf]
        return out

    def velocity_values(self, w) -> tuple[np.ndarray, np.ndarray]:
        """Values (nc, nq, 2) and gradients (nc, nq, 2, 2), dw[..., a, b] = d_b w_a."""
        V = self.V
        wc = np.asarray(w).reshape(2, self.n)[:, V.cell_dofs]  # (2, nc, nloc)
        vals = np.einsum("acl,ql->cqa", wc, V.phi)
        grads = np.einsum("acl,cqlb->cqab", wc, V.dphi)
        return vals, grads

    def body_load(self, force: Callable | None) -> np.ndarray:
        """Full vector of int f . phi_k e_a."""
        if force is None:
            return np.zeros(2 * self.n)
        V = self.V
        vals = np.asarray(force(V.xq.reshape(-1, 2)), dtype=float).reshape(*V.wq.shape, 2)
        elem = np.einsum("cqa,cq,ql->cla", vals, V.wq, V.phi)
        return np.bincount(self._vec_dofs().ravel(), weights=elem.ravel(), minlength=2 * self.n)

    def gradient_load(self, phi_nodal) -> np.ndarray:
        """Full vector of (grad phi_h, phi_k e_a) for a P1 function phi_h."""
        V = self.V
        grad = np.einsum("cl,cla->ca", np.asarray(phi_nodal)[self.pdofs], self.dpsi)  # (nc, 2)
        elem = np.einsum("ca,cq,ql->cla", grad, V.wq, V.phi)
        return np.bincount(self._vec_dofs().ravel(), weights=elem.ravel(), minlength=2 * self.n)

    def convection(self, w, with_jacobian: bool = True):
        """Full vector c(w; w, phi_k e_a) and optionally its sparse Jacobian in w."""
        V = self.V
        vals, grads = self.velocity_values(w)
        res, jac = kernels.convection_local(vals, grads, V.phi, V.dphi, V.wq)
        dofs = self._vec_dofs()
        vec = np.bincount(dofs.ravel(), weights=res.ravel(), minlength=2 * self.n)
        if not with_jacobian:
            return vec, None
        nc, nl = dofs.shape[:2]
        rows = np.broadcast_to(dofs[:, :, :, None, None], (nc, nl, 2, nl, 2))
        cols = np.broadcast_to(dofs[:, None, None, :, :], (nc, nl, 2, nl, 2))
        return vec, _coo(rows, cols, jac, (2 * self.n, 2 * self.n))

    def trilinear(self, a, b, z) -> float:
        """c(a; b, z) = 1/2 [((a.grad) b, z) - ((a.grad) z, b)] for full vectors."""
        av, _ = self.velocity_values(a)
        bv, bg = self.velocity_values(b)
        zv, zg = self.velocity_values(z)
        t1 = np.einsum("cqb,cqab,cqa->cq", av, bg, zv)
        t2 = np.einsum("cqb,cqab,cqa->cq", av, zg, bv)
        return float(0.5 * np.sum(self.V.wq * (t1 - t2)))

    def extension_form(self, u_ext) -> np.ndarray:
        """Matrix S on full vectors with u^T S u = c(u; u_ext, u)."""
        V = self.V
        gv, gg = self.velocity_values(u_ext)
        w = V.wq
        # ((u.grad) g, u): u_a = phi_k comp a, u_b = phi_l comp b -> int phi_k phi_l d_b g_a
        s1 = np.einsum("cq,qk,ql,cqab->ckalb", w, V.phi, V.phi, gg)
        # ((u.grad) u, g): int phi_l (d_b phi_k) g_a
        s2 = np.einsum("cq,ql,cqkb,cqa->ckalb", w, V.phi, V.dphi, gv)
        dofs = self._vec_dofs()
        nc, nl = dofs.shape[:2]
        rows = np.broadcast_to(dofs[:, :, :, None, None], (nc, nl, 2, nl, 2))
        cols = np.broadcast_to(dofs[:, None, None, :, :], (nc, nl, 2, nl, 2))
        return _coo(rows, cols, 0.5 * (s1 - s2), (2 * self.n, 2 * self.n))

    def evaluate(self, w, points) -> np.ndarray:
        """Point values (npts, 2) of a full velocity vector."""
        cell, xi = locate(self.mesh, points)
        phi, _ = shape_functions(2, 2, xi)
        W = np.asarray(w).reshape(2, self.n)
        dofs = self.V.cell_dofs[cell]
        return np.stack([np.einsum("kl,kl->k", phi, W[a][dofs]) for a in range(2)], axis=1)

    def prolong_from(self, coarse: "TaylorHood", w) -> np.ndarray:
        """Full vector on this lattice of a velocity from a coarser nested level."""
        return coarse.evaluate(w, self.V.node_coords).T.ravel()

    def seminorm(self, w) -> float:
        return float(np.sqrt(max(w @ (self.stiffness @ w), 0.0)))


@lru_cache(maxsize=8)
def taylor_hood(refinement: int) -> TaylorHood:
    """Cached P2/P1 data for the mesh with 2**refinement cells per side."""
    return TaylorHood(refinement)


BOUNDARY_DATA = {"lid": regularized_lid, "lid-classic": classic_lid, "none": None}


def make_navier_stokes(refinement: int, nu: float, body_force: Callable | None = None,
                       boundary: str | Callable | None = "lid", lid_speed: float = 1.0) -> OperatorProblem:
    """Velocity problem on the divergence-free subspace with Phi = id.

    a(y, z) = nu (grad w, grad Z z) + c(w; w, Z z) with w = u_ext + Z y and
    <b, z> = (f, Z z).
    """
    if not nu > 0:
        raise ConfigurationError(f"viscosity must be positive, got {nu}")
    th = taylor_hood(refinement)
    if isinstance(boundary, str):
        if boundary not in BOUNDARY_DATA:
            raise ConfigurationError(f"unknown boundary data {boundary!r}")
        base = BOUNDARY_DATA[boundary]
        data = None if base is None or lid_speed == 0 else (lambda pts: base(pts, lid_speed))
    else:
        data = boundary
    Z = th.Z
    free = th.free
    u_ext = th.stokes_extension(data) if data is not None else np.zeros(2 * th.n)
    K = th.stiffness
    K_ff = th.K_ff
    F = th.body_load(body_force)
    space = EuclideanSpace(Z.shape[1], "divergence-free H^1_0")

    def total(y):
        w = u_ext.copy()
        w[free] += Z @ y
        return w

    def action(y):
        w = total(y)
        conv, _ = th.convection(w, with_jacobian=False)
        return Z.T @ (nu * (K @ w) + conv)[free]

    def jacobian(y):
        _, C = th.convection(total(y))
        J = nu * K_ff + C[free][:, free]
        return Z.T @ np.asarray(J @ Z)

    def distance(y_fine, coarse, y_coarse):
        th_c = coarse.info["discretization"]
        w_c = coarse.info["total_velocity"](y_coarse)
        return th.seminorm(total(y_fine) - th.prolong_from(th_c, w_c))

    return OperatorProblem(
        trial=space,
        test=space,
        action=action,
        rhs=Z.T @ F[free],
        jacobian=jacobian,
        name="ns-cavity",
        distance=distance,
        test_map=TestMap.identity(),
        info={
            "discretization": th,
            "nu": float(nu),
            "u_ext": u_ext,
            "load": F,
            "total_velocity": total,
            "refinement": refinement,
        },
    )


def energy_identity(problem: OperatorProblem, y) -> tuple[float, float]:
    """(nu ||grad u||^2, (f, u) - c(w; u_ext, u) - nu (grad u_ext, grad u)) for u = Z y.

    The two sides agree exactly for a solution; their difference equals
    y . r for the residual r.
    """
    th = problem.info["discretization"]
    nu = problem.info["nu"]
    u_ext = problem.info["u_ext"]
    y = np.asarray(y, dtype=float)
    u = np.zeros(2 * th.n)
    u[th.free] = th.Z @ y
    w = u_ext + u
    lhs = nu * float(u @ (th.stiffness @ u))
    rhs = float(problem.info["load"] @ u) - th.trilinear(w, u_ext, u) - nu * float(u_ext @ (th.stiffness @ u))
    return lhs, rhs


def measure_extension_epsilon(problem: OperatorProblem, samples: int = 64, seed: int = 0) -> float:
    """max |c(u; u_ext, u)| / ||grad u||^2 over sampled divergence-free u.

    The samples are seeded random coordinate vectors together with the two
    extreme eigenvectors of the symmetrized quadratic form, so the value is
    the supremum over the discrete space up to rounding.
    """
    th = problem.info["discretization"]
    u_ext = problem.info["u_ext"]
    if not np.any(u_ext):
        return 0.0
    S = th.extension_form(u_ext)[th.free][:, th.free]
    Z = th.Z
    Q = Z.T @ np.asarray(S @ Z)
    Q = 0.5 * (Q + Q.T)
    rng = np.random.default_rng(seed)
    Y = rng.standard_normal((Z.shape[1], samples))
    lo = scipy.linalg.eigh(Q, eigvals_only=False, subset_by_index=[0, 0])[1]
    hi = scipy.linalg.eigh(Q, eigvals_only=False, subset_by_index=[Q.shape[0] - 1, Q.shape[0] - 1])[1]
    Y = np.column_stack([Y, lo, hi])
    ratios = np.abs(np.einsum("ij,ij->j", Y, Q @ Y)) / np.einsum("ij,ij->j", Y, Y)
    return float(np.max(ratios))


def pressure_infsup(th: TaylorHood):
    """Discrete inf-sup report of the divergence pair on zero-mean pressures."""
    from mgalerkin.certify import infsup_constants

    P0 = scipy.linalg.null_space(th.pressure_weights[None, :])
    A = P0.T @ th.B_f.toarray()
    GY = P0.T @ (th.pressure_mass @ P0)
    return infsup_constants(A, th.K_ff.toarray(), GY)


@lru_cache(maxsize=8)
def _infsup_value(refinement: int) -> float:
    return pressure_infsup(taylor_hood(refinement)).gammaXY


def recover_pressure(problem: OperatorProblem, y, threshold: float = INFSUP_THRESHOLD) -> np.ndarray:
    """Zero-mean P1 pressure from the momentum residual of a velocity solution.

    Solves B_f^T p = R in the least-squares sense with int p = 0, where R is
    the momentum residual (f, v) - nu (grad w, grad v) - c(w; w, v) on all
    interior velocity test functions.
    """
    th = problem.info["discretization"]
    gamma = _infsup_value(problem.info["refinement"])
    if gamma < threshold:
        raise UnstablePairError(f"discrete inf-sup constant {gamma:.3g} below {threshold}")
    w = problem.info["total_velocity"](np.asarray(y, dtype=float))
    conv, _ = th.convection(w, with_jacobian=False)
    R = (problem.info["load"] - problem.info["nu"] * (th.stiffness @ w) - conv)[th.free]
    # (p, div v) enters the momentum equation with a minus sign: B_f^T p = -R
    B = th.B_f
    m = th.pressure_weights
    A = sp.bmat([[B @ B.T, sp.csr_matrix(m[:, None])], [sp.csr_matrix(m[None, :]), None]], format="csc")
    sol = spla.spsolve(A, np.concatenate([-(B @ R), [0.0]]))
    return sol[: th.np]


def cavity_family(refinement: int, nu_final: float = 0.01, nu_start: float = 1.0, **kw):
    """t -> problem with viscosity nu_start^(1 - t) nu_final^t (geometric continuation)."""

    def family(t):
        return make_navier_stokes(refinement, nu_start ** (1.0 - t) * nu_final**t, **kw)

    return family
