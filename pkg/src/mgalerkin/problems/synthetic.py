"""Small synthetic operators used as counterexamples and solver checks."""

from __future__ import annotations

import numpy as np

from mgalerkin.operator import EuclideanSpace, OperatorProblem, TestMap


def make_cubic_scalar(b: float = 0.0) -> OperatorProblem:
    """A(x) = x^3 - x on R; roots -1, 0, 1 when b = 0."""
    space = EuclideanSpace(1, "R")
    return OperatorProblem(
        trial=space,
        test=space,
        action=lambda x: x**3 - x,
        rhs=np.array([float(b)]),
        jacobian=lambda x: np.array([[3.0 * x[0] ** 2 - 1.0]]),
        name="cubic-scalar",
        test_map=TestMap.identity(),
    )


def make_identity(dim: int, b=None) -> OperatorProblem:
    """A(x) = x on R^dim."""
    space = EuclideanSpace(dim)
    rhs = np.zeros(dim) if b is None else np.asarray(b, dtype=float)
    eye = np.eye(dim)
    return OperatorProblem(
        trial=space,
        test=space,
        action=lambda x: np.array(x, dtype=float),
        rhs=rhs,
        jacobian=lambda x: eye,
        name="identity",
        linear=True,
        test_map=TestMap.identity(),
    )


def make_linear(matrix, b=None, name: str = "linear") -> OperatorProblem:
    """A(x) = M x on Euclidean coordinates."""
    M = np.asarray(matrix, dtype=float)
    m, n = M.shape
    rhs = np.zeros(m) if b is None else np.asarray(b, dtype=float)
    return OperatorProblem(
        trial=EuclideanSpace(n),
        test=EuclideanSpace(m),
        action=lambda x: M @ x,
        rhs=rhs,
        jacobian=lambda x: M,
        name=name,
        linear=True,
        test_map=TestMap.identity() if m == n else None,
    )


def make_step(dim: int = 2, jump: float = 1.0) -> OperatorProblem:
    """A(x) = x + jump * H(x_0) e_0 with H the Heaviside step: discontinuous at x_0 = 0."""
    space = EuclideanSpace(dim)

    def action(x):
        out = np.array(x, dtype=float)
        out[0] += jump * float(x[0] > 0)
        return out

    return OperatorProblem(space, space, action, np.zeros(dim), name="step", test_map=TestMap.identity())


def rank_deficient(n: int = 4, rank: int = 3, seed: int = 0) -> np.ndarray:
    """Random n x n matrix of the given rank."""
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, rank)) @ rng.standard_normal((rank, n))
