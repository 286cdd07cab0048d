"""-Laplace u = f(u) + g with homogeneous Dirichlet data, trial space W^{1,p}_0."""

from __future__ import annotations

from typing import Callable

import numpy as np
import scipy.linalg

from mgalerkin.errors import ConfigurationError
from mgalerkin.fnspace import DiscreteSpace, SobolevExponents
from mgalerkin.operator import OperatorProblem, TestMap
from mgalerkin.problems.forcing import ForcingSpec


def load_functional(space: DiscreteSpace, load) -> np.ndarray:
    """<g, v_k> for a constant or a callable g(points) -> values."""
    if load is None:
        return np.zeros(space.dim)
    if callable(load):
        vals = np.asarray(load(space.xq.reshape(-1, space.mesh.dimension)), dtype=float)
        return space.load(vals.reshape(space.wq.shape))
    return space.load(np.full(space.wq.shape, float(load)))


def make_semilinear(space: DiscreteSpace, forcing: ForcingSpec, p: float = 2.0, load=1.0,
                    validate: bool = True, name: str = "semilinear") -> OperatorProblem:
    """a(u, v) = int grad u . grad v - int f(u) v and <b, v> = int g v.

    Trial space W^{1,p}_0, test space W^{1,q}_0 on the same basis, and the
    test map Phi(u) = K^{-1} J_p(u) (the identity for p = 2) attached as
    ``problem.test_map``.
    """
    if not 1.0 < p <= 2.0:
        raise ConfigurationError(f"the semilinear family needs 1 < p <= 2, got {p}")
    fit = forcing.validate() if validate else None
    exps = SobolevExponents.from_p(p, space.mesh.dimension)
    trial = space.with_exponent(p)
    test = space.with_exponent(exps.q)
    K = space.stiffness

    def action(u):
        return K @ u - space.load(forcing(space.values(u)))

    def jacobian(u):
        return K - space.weighted_mass(forcing.derivative(space.values(u)))

    return OperatorProblem(
        trial=trial,
        test=test,
        action=action,
        rhs=load_functional(space, load),
        jacobian=jacobian,
        name=name,
        test_map=TestMap.duality_poisson(trial, p),
        info={"exponents": exps, "forcing": forcing, "growth_fit": fit, "p": p},
    )


def forcing_functional(problem: OperatorProblem, u) -> np.ndarray:
    """The functional v -> int f(u) v of a semilinear problem."""
    space = problem.trial
    return space.load(problem.info["forcing"](space.values(u)))


def discrete_first_eigenpair(space: DiscreteSpace) -> tuple[float, np.ndarray]:
    """Smallest eigenvalue of K v = lam M v with v normalized in the stiffness norm."""
    K = space.stiffness.toarray()
    M = space.mass.toarray()
    vals, vecs = scipy.linalg.eigh(K, M, subset_by_index=[0, 0])
    v = vecs[:, 0]
    v /= np.sqrt(v @ K @ v)
    return float(vals[0]), v * np.sign(v[np.argmax(np.abs(v))])


def make_resonant(space: DiscreteSpace, load=1.0, shift: float | str = "discrete") -> OperatorProblem:
    """A(u) = -Laplace u - sigma u with sigma at the first eigenvalue.

    ``shift="discrete"`` uses the discrete eigenvalue of (K, M) on this space,
    which makes the operator exactly singular; ``"continuous"`` uses pi^2,
    the eigenvalue of the continuous problem on (0, 1), which the discrete
    eigenvalues approach from above so the discrete solutions blow up under
    refinement.
    """
    if shift == "discrete":
        sigma, _ = discrete_first_eigenpair(space)
    elif shift == "continuous":
        sigma = space.mesh.dimension * np.pi**2
    else:
        sigma = float(shift)
    K, M = space.stiffness, space.mass
    A = (K - sigma * M).tocsr()
    return OperatorProblem(
        trial=space,
        test=space,
        action=lambda u: A @ u,
        rhs=load_functional(space, load),
        jacobian=lambda u: A,
        name="resonant",
        linear=True,
        test_map=TestMap.identity(),
        info={"shift": sigma},
    )


def make_laplace(space: DiscreteSpace, load=1.0) -> OperatorProblem:
    """Linear Poisson problem -Laplace u = g."""
    K = space.stiffness
    return OperatorProblem(
        trial=space,
        test=space,
        action=lambda u: K @ u,
        rhs=load_functional(space, load),
        jacobian=lambda u: K,
        name="laplace",
        linear=True,
        test_map=TestMap.identity(),
    )


def make_saturating(space: DiscreteSpace, load: float | Callable = 1.0, scale: float = 1.0) -> OperatorProblem:
    """Nonlocal diffusion A(u) = -scale * Laplace u / sqrt(1 + ||grad u||^2).

    With Phi = id, a(u, u)/||u|| = scale * ||u|| / sqrt(1 + ||u||^2) -> scale:
    bounded coercivity with M = scale and N(Phi) = 1.  A(u) = b is solvable
    exactly when ||b||_{H^-1} < scale, with ||u|| = beta / sqrt(1 - beta^2)
    for beta = ||b|| / scale.
    """
    K = space.stiffness

    def action(u):
        Ku = K @ u
        return scale * Ku / np.sqrt(1.0 + u @ Ku)

    def jacobian(u):
        Ku = K @ u
        s = np.sqrt(1.0 + u @ Ku)
        return scale * (K.toarray() / s - np.outer(Ku, Ku) / s**3)

    return OperatorProblem(
        trial=space,
        test=space,
        action=action,
        rhs=load_functional(space, load),
        jacobian=jacobian,
        name="saturating",
        test_map=TestMap.identity(),
        info={"M": scale, "N": 1.0},
    )
