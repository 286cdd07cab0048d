"""Primal-mixed Poisson problem: q = grad u, -div q = f(u) + g.

Unknowns are stacked as x = [q; u] with q a cellwise-constant vector field
and u a P1 function.  The form is

    a((q, u), (p, v)) = (q, p) - (grad u, p) + (q, grad v) - (f(u), v)

tested through Phi(q, u) = (q - grad u, u).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from mgalerkin.errors import ConfigurationError
from mgalerkin.fnspace import DiscreteSpace, FluxSpace, locate, prolong
from mgalerkin.operator import GramSpace, OperatorProblem, TestMap
from mgalerkin.problems.forcing import ForcingSpec
from mgalerkin.problems.semilinear import load_functional


def _prolong_flux(coarse: FluxSpace, q, fine: FluxSpace) -> np.ndarray:
    """Cellwise-constant field on a nested finer mesh (exact)."""
    d = fine.mesh.dimension
    centroids = fine.mesh.vertices[fine.mesh.cells].mean(axis=1)
    cell, _ = locate(coarse.mesh, centroids)
    q = np.asarray(q).reshape(d, coarse.ncells)
    return q[:, cell].ravel()


def make_mixed_poisson(flux: FluxSpace, potential: DiscreteSpace, forcing: ForcingSpec,
                       load=1.0, validate: bool = True) -> OperatorProblem:
    """Block operator on X = L^2 x H^1_0 with the shear test map (q - grad u, u)."""
    if flux.mesh is not potential.mesh:
        raise ConfigurationError("flux and potential spaces must share a mesh")
    if validate:
        forcing.validate()
    D = flux.gradient_matrix(potential)  # raises for incompatible pairs
    Mq = flux.mass
    B = (Mq @ D).tocsr()
    K = potential.stiffness
    nq, nu = flux.dim, potential.dim
    gram = sp.block_diag([Mq, K], format="csr")
    trial = GramSpace(gram, "L2 x H1_0")
    test = GramSpace(gram, "L2 x H1_0")
    rhs = np.concatenate([np.zeros(nq), load_functional(potential, load)])

    def split(x):
        return x[:nq], x[nq:]

    def action(x):
        q, u = split(x)
        return np.concatenate([
            Mq @ q - B @ u,
            B.T @ q - potential.load(forcing(potential.values(u))),
        ])

    def jacobian(x):
        _, u = split(x)
        Nu = potential.weighted_mass(forcing.derivative(potential.values(u)))
        return sp.bmat([[Mq, -B], [B.T, -Nu]], format="csr")

    shear = sp.bmat([[sp.identity(nq), -D], [None, sp.identity(nu)]], format="csr")
    phi = TestMap.linear(shear, kind="mixed-shear")

    def distance(x_fine, coarse, x_coarse):
        cf, cp = coarse.info["flux"], coarse.info["potential"]
        qc, uc = x_coarse[: cf.dim], x_coarse[cf.dim:]
        up = np.concatenate([_prolong_flux(cf, qc, flux), prolong(cp, uc, potential)])
        return trial.norm(x_fine - up)

    return OperatorProblem(
        trial=trial,
        test=test,
        action=action,
        rhs=rhs,
        jacobian=jacobian,
        name="mixed-poisson",
        distance=distance,
        test_map=phi,
        info={"flux": flux, "potential": potential, "gradient": D, "forcing": forcing},
    )


def split_mixed(problem: OperatorProblem, x) -> tuple[np.ndarray, np.ndarray]:
    """(q, u) blocks of a mixed state."""
    n = problem.info["flux"].dim
    x = np.asarray(x, dtype=float)
    return x[:n], x[n:]
