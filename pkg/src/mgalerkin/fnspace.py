"""Conforming P1/P2 finite element spaces on the unit interval and unit square.

All coefficient vectors live on interior degrees of freedom; homogeneous
Dirichlet values are implied on the boundary.  The W^{1,p} norm is the
gradient norm (sum_i int |d_i u|^p)^(1/p), which makes <J(u), u> = ||u||^p
hold exactly at the discrete level.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from mgalerkin import kernels
from mgalerkin.errors import ConfigurationError, DomainError, InputError
from mgalerkin.quadrature import rule

# ---------------------------------------------------------------------------
# meshes


@dataclass(frozen=True)
class Mesh:
    """Uniform mesh of (0, 1) or a right-triangle split of the unit square."""

    dimension: int
    cells_per_side: int
    vertices: np.ndarray  # (nv, d)
    cells: np.ndarray  # (nc, d + 1), counter-clockwise in 2D
    boundary: np.ndarray  # (nv,) bool

    @property
    def h(self) -> float:
        return 1.0 / self.cells_per_side

    def to_json(self) -> str:
        return json.dumps(
            {
                "dimension": self.dimension,
                "cells_per_side": self.cells_per_side,
                "vertices": self.vertices.tolist(),
                "cells": self.cells.tolist(),
                "boundary": self.boundary.astype(int).tolist(),
            }
        )


def unit_mesh(dim: int, n: int) -> Mesh:
    """Mesh with ``n`` cells per side.

    In 2D each grid square [i, i+1] x [j, j+1] is split along its
    (i, j)-(i+1, j+1) diagonal into two right triangles.
    """
    if dim == 1:
        x = np.linspace(0.0, 1.0, n + 1)
        cells = np.column_stack([np.arange(n), np.arange(1, n + 1)])
        bnd = np.zeros(n + 1, dtype=bool)
        bnd[[0, n]] = True
        return Mesh(1, n, x[:, None], cells, bnd)
    if dim == 2:
        idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)  # idx[j, i]
        s = np.linspace(0.0, 1.0, n + 1)
        X, Y = np.meshgrid(s, s)
        verts = np.column_stack([X.ravel(), Y.ravel()])
        v00 = idx[:-1, :-1].ravel()
        v10 = idx[:-1, 1:].ravel()
        v01 = idx[1:, :-1].ravel()
        v11 = idx[1:, 1:].ravel()
        lower = np.column_stack([v00, v10, v11])
        upper = np.column_stack([v00, v11, v01])
        cells = np.empty((2 * n * n, 3), dtype=np.int64)
        cells[0::2] = lower
        cells[1::2] = upper
        bnd = np.zeros((n + 1, n + 1), dtype=bool)
        bnd[0, :] = bnd[-1, :] = bnd[:, 0] = bnd[:, -1] = True
        return Mesh(2, n, verts, cells, bnd.ravel())
    raise ConfigurationError(f"dimension must be 1 or 2, got {dim}")


# ---------------------------------------------------------------------------
# reference elements


def _shape_1d(degree: int, xi: np.ndarray):
    x = xi[:, 0]
    one = np.ones_like(x)
    if degree == 1:
        vals = np.column_stack([1 - x, x])
        grads = np.stack([-one, one], axis=1)[:, :, None]
    else:
        vals = np.column_stack([(1 - x) * (1 - 2 * x), x * (2 * x - 1), 4 * x * (1 - x)])
        grads = np.stack([4 * x - 3, 4 * x - 1, 4 - 8 * x], axis=1)[:, :, None]
    return vals, grads


def _shape_2d(degree: int, xi: np.ndarray):
    s, t = xi[:, 0], xi[:, 1]
    l0, l1, l2 = 1 - s - t, s, t
    # barycentric gradients in reference coordinates
    g0, g1, g2 = np.array([-1.0, -1.0]), np.array([1.0, 0.0]), np.array([0.0, 1.0])
    if degree == 1:
        vals = np.column_stack([l0, l1, l2])
        grads = np.broadcast_to(np.stack([g0, g1, g2]), (len(s), 3, 2)).copy()
        return vals, grads
    # vertices 0, 1, 2 then midpoints of edges (0,1), (1,2), (0,2)
    lam = (l0, l1, l2)
    glam = (g0, g1, g2)
    vals, grads = [], []
    for i in range(3):
        vals.append(lam[i] * (2 * lam[i] - 1))
        grads.append(np.outer(4 * lam[i] - 1, glam[i]))
    for i, j in ((0, 1), (1, 2), (0, 2)):
        vals.append(4 * lam[i] * lam[j])
        grads.append(4 * (np.outer(lam[j], glam[i]) + np.outer(lam[i], glam[j])))
    return np.column_stack(vals), np.stack(grads, axis=1)


def shape_functions(dim: int, degree: int, xi: np.ndarray):
    """Reference basis values (npts, nloc) and gradients (npts, nloc, dim)."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    return _shape_1d(degree, xi) if dim == 1 else _shape_2d(degree, xi)


def _lattice(mesh: Mesh, degree: int):
    """Global node numbering on the (degree*n + 1)^d lattice."""
    n = mesh.cells_per_side
    m = degree * n
    if mesh.dimension == 1:
        coords = np.linspace(0.0, 1.0, m + 1)[:, None]
        cells = degree * mesh.cells
        if degree == 2:
            cells = np.column_stack([cells, cells.sum(axis=1) // 2])
        bnd = np.zeros(m + 1, dtype=bool)
        bnd[[0, m]] = True
        return coords, cells.astype(np.int64), bnd
    s = np.linspace(0.0, 1.0, m + 1)
    X, Y = np.meshgrid(s, s)
    coords = np.column_stack([X.ravel(), Y.ravel()])
    lat = np.rint(mesh.vertices * n).astype(np.int64) * degree  # (nv, 2) lattice ij
    corners = lat[mesh.cells]  # (nc, 3, 2)
    pts = [corners[:, 0], corners[:, 1], corners[:, 2]]
    if degree == 2:
        for i, j in ((0, 1), (1, 2), (0, 2)):
            pts.append((corners[:, i] + corners[:, j]) // 2)
    pts = np.stack(pts, axis=1)
    cells = pts[..., 1] * (m + 1) + pts[..., 0]
    ij = np.rint(coords * m).astype(np.int64)
    bnd = (ij == 0).any(axis=1) | (ij == m).any(axis=1)
    return coords, cells.astype(np.int64), bnd


# ---------------------------------------------------------------------------
# spaces


class DiscreteSpace:
    """Nodal Lagrange space with homogeneous Dirichlet conditions.

    Geometry and quadrature data are precomputed per cell so that all
    nonlinear integrands can be evaluated in vectorized form.
    """

    def __init__(self, mesh: Mesh, degree: int, p: float = 2.0):
        if degree not in (1, 2):
            raise ConfigurationError(f"degree must be 1 or 2, got {degree}")
        if not p > 1.0:
            raise DomainError(f"exponent p must exceed 1, got {p}")
        self.mesh = mesh
        self.degree = degree
        self.p = float(p)
        d = mesh.dimension
        self.node_coords, self.cell_dofs, self.node_boundary = _lattice(mesh, degree)
        self.ntotal = len(self.node_coords)
        free = ~self.node_boundary
        self.free_nodes = np.flatnonzero(free)
        self.free_index = np.full(self.ntotal, -1, dtype=np.int64)
        self.free_index[self.free_nodes] = np.arange(len(self.free_nodes))
        self.dim = len(self.free_nodes)
        self.quad_exactness = 2 * degree + 2
        self.qpoints, qweights = rule(d, self.quad_exactness)
        self.phi, dref = shape_functions(d, degree, self.qpoints)

        v = mesh.vertices[mesh.cells]  # (nc, d+1, d)
        jac = np.stack([v[:, k + 1] - v[:, 0] for k in range(d)], axis=2)  # (nc, d, d)
        self.det = np.abs(np.linalg.det(jac))
        jinv_t = np.transpose(np.linalg.inv(jac), (0, 2, 1))
        self.dphi = np.einsum("cij,qlj->cqli", jinv_t, dref)
        self.wq = self.det[:, None] * qweights[None, :]
        self.xq = v[:, None, 0, :] + np.einsum("cij,qj->cqi", jac, self.qpoints)

    # -- identity -------------------------------------------------------
    def with_exponent(self, p: float) -> "DiscreteSpace":
        """Same mesh and basis, measured in W^{1,p}; shares assembled data."""
        other = object.__new__(DiscreteSpace)
        other.__dict__.update(self.__dict__)
        if not p > 1.0:
            raise DomainError(f"exponent p must exceed 1, got {p}")
        other.p = float(p)
        return other

    def __repr__(self) -> str:
        return (
            f"DiscreteSpace(dim={self.mesh.dimension}, n={self.mesh.cells_per_side}, "
            f"P{self.degree}, p={self.p:g}, ndof={self.dim})"
        )

    # -- coefficient plumbing -------------------------------------------
    def check(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dim,):
            raise InputError(f"expected coefficient vector of length {self.dim}, got {u.shape}")
        return u

    def extend(self, u: np.ndarray) -> np.ndarray:
        full = np.zeros(self.ntotal)
        full[self.free_nodes] = u
        return full

    def values(self, u) -> np.ndarray:
        """u at quadrature points, shape (ncell, nq)."""
        ue = self.extend(self.check(u))[self.cell_dofs]
        return ue @ self.phi.T

    def gradients(self, u) -> np.ndarray:
        """grad u at quadrature points, shape (ncell, nq, d)."""
        ue = self.extend(self.check(u))[self.cell_dofs]
        return np.einsum("cqld,cl->cqd", self.dphi, ue)

    def restrict(self, full: np.ndarray) -> np.ndarray:
        return full[self.free_nodes]

    def load(self, integrand: np.ndarray) -> np.ndarray:
        """Functional v_k -> int g v_k for g given at quadrature points."""
        elem = (integrand * self.wq) @ self.phi
        return self.restrict(kernels.scatter_add(self.cell_dofs, elem, self.ntotal))

    def grad_load(self, field: np.ndarray) -> np.ndarray:
        """Functional v_k -> int G . grad v_k for G given at quadrature points."""
        elem = np.einsum("cqd,cqld->cl", field * self.wq[:, :, None], self.dphi)
        return self.restrict(kernels.scatter_add(self.cell_dofs, elem, self.ntotal))

    def weighted_mass(self, coef: np.ndarray) -> sp.csr_matrix:
        """Matrix int c v_j v_i for c given at quadrature points."""
        local = np.einsum("cq,qk,ql->ckl", coef * self.wq, self.phi, self.phi)
        return self._assemble(local)

    def weighted_stiffness(self, coef: np.ndarray) -> sp.csr_matrix:
        """Matrix sum_i int c_i d_i v_j d_i v_k for per-direction weights c (ncell, nq, d)."""
        local = np.einsum("cqd,cqkd,cqld->ckl", coef * self.wq[:, :, None], self.dphi, self.dphi)
        return self._assemble(local)

    def _assemble(self, local: np.ndarray) -> sp.csr_matrix:
        nl = self.cell_dofs.shape[1]
        rows = np.repeat(self.cell_dofs, nl, axis=1).ravel()
        cols = np.tile(self.cell_dofs, (1, nl)).ravel()
        fi = self.free_index
        keep = (fi[rows] >= 0) & (fi[cols] >= 0)
        mat = sp.coo_matrix(
            (local.ravel()[keep], (fi[rows[keep]], fi[cols[keep]])), shape=(self.dim, self.dim)
        )
        return mat.tocsr()

    # -- Gram matrices ----------------------------------------------------
    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        d = self.mesh.dimension
        return self.weighted_stiffness(np.ones((len(self.det), len(self.wq[0]), d)))

    @cached_property
    def mass(self) -> sp.csr_matrix:
        return self.weighted_mass(np.ones_like(self.wq))

    @cached_property
    def _stiffness_lu(self):
        return spla.splu(self.stiffness.tocsc())

    @cached_property
    def stiffness_cholesky(self) -> np.ndarray:
        """Dense lower Cholesky factor L of the stiffness matrix, K = L L^T."""
        return np.linalg.cholesky(self.stiffness.toarray())

    @property
    def gram(self) -> sp.csr_matrix:
        """Inner-product matrix of H^1_0 (gradient inner product)."""
        return self.stiffness

    @cached_property
    def _frame(self) -> np.ndarray:
        L = self.stiffness_cholesky
        return scipy.linalg.solve_triangular(L, np.eye(self.dim), lower=True, trans="T")

    def orthonormal_frame(self) -> np.ndarray:
        """Columns form a stiffness-orthonormal basis, in nodal coordinates."""
        return self._frame

    # -- norms ---------------------------------------------------------------
    def norm(self, u, p: float | None = None) -> float:
        return norm_w1p(self, u, self.p if p is None else p)

    def interior_coords(self) -> np.ndarray:
        return self.node_coords[self.free_nodes]


def build_space(dim: int, refinement: int, degree: int = 1, p: float = 2.0) -> DiscreteSpace:
    """Space on the mesh with 2**refinement cells per side.

    Refinement k+1 bisects every cell of refinement k, so the spaces are nested.
    """
    if dim not in (1, 2):
        raise ConfigurationError(f"dimension must be 1 or 2, got {dim}")
    if degree not in (1, 2):
        raise ConfigurationError(f"degree must be 1 or 2, got {degree}")
    if int(refinement) != refinement or refinement < 1:
        raise ConfigurationError(f"refinement must be a positive integer, got {refinement}")
    return DiscreteSpace(unit_mesh(dim, 2 ** int(refinement)), degree, p)


# ---------------------------------------------------------------------------
# Sobolev exponents


@dataclass(frozen=True)
class SobolevExponents:
    """p, its conjugate q, the embedding exponents p*, q* and the pairing exponent r.

    1/p* = 1/p - 1/d (p* = inf when p > d, ``critical`` when p == d),
    likewise for q*, and 1/r + 1/q* = 1.
    """

    p: float
    q: float
    d: int
    p_star: float
    q_star: float
    r: float

    @classmethod
    def from_p(cls, p: float, d: int, critical: float | None = None) -> "SobolevExponents":
        if not p > 1.0:
            raise DomainError(f"p must exceed 1, got {p}")
        q = p / (p - 1.0)
        crit = float(critical) if critical is not None else 4.0 * d

        def star(s):
            inv = 1.0 / s - 1.0 / d
            if math.isclose(inv, 0.0, abs_tol=1e-14):
                return crit
            return math.inf if inv < 0 else 1.0 / inv

        qs = star(q)
        r = 1.0 if math.isinf(qs) else 1.0 / (1.0 - 1.0 / qs)
        return cls(float(p), q, int(d), star(p), qs, r)


# ---------------------------------------------------------------------------
# operations


def norm_w1p(space: DiscreteSpace, u, p: float) -> float:
    """(sum_i int |d_i u|^p)^(1/p) by quadrature."""
    if not p > 1.0:
        raise DomainError(f"p must exceed 1, got {p}")
    g = space.gradients(u)
    if p == 2.0:
        total = float(np.sum(space.wq[:, :, None] * g * g))
    else:
        _, total = kernels.duality_elements(g, space.dphi, space.wq, p)
    return total ** (1.0 / p)


def duality_map(space: DiscreteSpace, u, p: float) -> np.ndarray:
    """Coefficients j_k = <J(u), v_k> = sum_i int sgn(d_i u)|d_i u|^(p-1) d_i v_k."""
    if not p > 1.0:
        raise DomainError(f"p must exceed 1, got {p}")
    elem, _ = kernels.duality_elements(space.gradients(u), space.dphi, space.wq, p)
    return space.restrict(kernels.scatter_add(space.cell_dofs, elem, space.ntotal))


def duality_jacobian(space: DiscreteSpace, u, p: float, floor: float = 1e-12) -> sp.csr_matrix:
    """Derivative of :func:`duality_map`: sum_i int (p-1)|d_i u|^(p-2) d_i v_l d_i v_k.

    For p < 2 the weight blows up where a gradient component vanishes; such
    components are clipped to ``floor``.
    """
    a = np.abs(space.gradients(u))
    if p < 2.0:
        a = np.maximum(a, floor)
    return space.weighted_stiffness((p - 1.0) * a ** (p - 2.0))


def poisson_solve(space: DiscreteSpace, rhs) -> np.ndarray:
    """z with K z = rhs for the stiffness matrix K."""
    rhs = space.check(rhs)
    return space._stiffness_lu.solve(rhs)


def interpolate(space: DiscreteSpace, f: Callable) -> np.ndarray:
    """Nodal interpolant at interior nodes; ``f`` takes an (npts, d) array."""
    x = space.interior_coords()
    vals = np.asarray(f(x), dtype=float).reshape(-1)
    if vals.shape != (space.dim,):
        raise InputError(f"function returned {vals.shape}, expected ({space.dim},)")
    if not np.all(np.isfinite(vals)):
        raise InputError("non-finite nodal value in interpolation")
    return vals


def locate(mesh: Mesh, points: np.ndarray):
    """Cell index and reference coordinates of each point (structured lookup)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = mesh.cells_per_side
    if mesh.dimension == 1:
        x = pts[:, 0]
        i = np.clip(np.floor(x * n).astype(np.int64), 0, n - 1)
        return i, (x * n - i)[:, None]
    x, y = pts[:, 0] * n, pts[:, 1] * n
    i = np.clip(np.floor(x).astype(np.int64), 0, n - 1)
    j = np.clip(np.floor(y).astype(np.int64), 0, n - 1)
    fx, fy = x - i, y - j
    upper = fy > fx
    cell = 2 * (j * n + i) + upper
    # lower: (0,0),(1,0),(1,1) -> xi = (fx - fy, fy); upper: (0,0),(1,1),(0,1) -> xi = (fx, fy - fx)
    xi = np.where(upper[:, None], np.column_stack([fx, fy - fx]), np.column_stack([fx - fy, fy]))
    return cell, xi


def evaluate(space: DiscreteSpace, u, points) -> np.ndarray:
    """Point values of the discrete function with coefficients u."""
    cell, xi = locate(space.mesh, points)
    full = space.extend(space.check(u))
    phi, _ = shape_functions(space.mesh.dimension, space.degree, xi)
    return np.einsum("kl,kl->k", phi, full[space.cell_dofs[cell]])


def prolong(coarse: DiscreteSpace, u, fine: DiscreteSpace) -> np.ndarray:
    """Represent a coarse function in a nested finer space (exact for nested meshes)."""
    return evaluate(coarse, u, fine.interior_coords())


# ---------------------------------------------------------------------------
# vector-valued piecewise constants (flux space of the mixed formulation)


class FluxSpace:
    """Cellwise-constant vector fields on a mesh, measured in L^2."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        d = mesh.dimension
        v = mesh.vertices[mesh.cells]
        jac = np.stack([v[:, k + 1] - v[:, 0] for k in range(d)], axis=2)
        self.areas = np.abs(np.linalg.det(jac)) / math.factorial(d)
        self.ncells = len(self.areas)
        self.dim = d * self.ncells

    @cached_property
    def mass(self) -> sp.csr_matrix:
        # coefficient layout: component-major blocks [q_x(cells), q_y(cells)]
        return sp.diags(np.tile(self.areas, self.mesh.dimension)).tocsr()

    @property
    def gram(self) -> sp.csr_matrix:
        return self.mass

    def norm(self, q) -> float:
        q = np.asarray(q, dtype=float)
        return float(np.sqrt(q @ (self.mass @ q)))

    def gradient_matrix(self, space: DiscreteSpace) -> sp.csr_matrix:
        """D with (D u) = cellwise gradient of u; requires a P1 space on this mesh."""
        if space.mesh is not self.mesh or space.degree != 1:
            raise ConfigurationError("flux space needs a P1 potential space on the same mesh")
        d = self.mesh.dimension
        g = space.dphi[:, 0]  # (nc, 3, d): constant per cell for P1
        rows, cols, vals = [], [], []
        fi = space.free_index[space.cell_dofs]
        for comp in range(d):
            for loc in range(space.cell_dofs.shape[1]):
                keep = fi[:, loc] >= 0
                rows.append(comp * self.ncells + np.flatnonzero(keep))
                cols.append(fi[keep, loc])
                vals.append(g[keep, loc, comp])
        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.dim, space.dim),
        ).tocsr()
