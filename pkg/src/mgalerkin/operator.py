"""Operators A: X -> Y' as forms, test maps, Galerkin hierarchies, residual assembly.

Coefficient conventions: a trial vector ``x`` holds coordinates in the trial
basis, and ``problem.action(x)`` returns the functional A(x) as its values on
the test basis, so that a(x, y) = action(x) @ y for test coordinates ``y``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from mgalerkin import kernels
from mgalerkin.errors import ConfigurationError, InputError
from mgalerkin.fnspace import (
    DiscreteSpace,
    duality_jacobian,
    duality_map,
    norm_w1p,
    poisson_solve,
    prolong,
)


class GramSpace:
    """Coordinate space normed by an SPD Gram matrix."""

    def __init__(self, gram, name: str = "gram"):
        self.gram = sp.csr_matrix(gram) if sp.issparse(gram) else np.asarray(gram, dtype=float)
        self.dim = self.gram.shape[0]
        self.name = name

    def norm(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(np.sqrt(max(x @ (self.gram @ x), 0.0)))

    @cached_property
    def _frame(self) -> np.ndarray:
        G = self.gram.toarray() if sp.issparse(self.gram) else self.gram
        L = np.linalg.cholesky(G)
        return scipy.linalg.solve_triangular(L, np.eye(self.dim), lower=True, trans="T")

    def orthonormal_frame(self) -> np.ndarray:
        return self._frame

    def __repr__(self) -> str:
        return f"GramSpace({self.name}, dim={self.dim})"


class EuclideanSpace:
    """Coordinates that are already orthonormal for the space's inner product."""

    def __init__(self, dim: int, name: str = "euclidean"):
        self.dim = int(dim)
        self.name = name

    @property
    def gram(self):
        return sp.identity(self.dim, format="csr")

    def norm(self, x) -> float:
        return float(np.linalg.norm(np.asarray(x, dtype=float)))

    def orthonormal_frame(self):
        return None  # coordinate basis is orthonormal already

    def __repr__(self) -> str:
        return f"EuclideanSpace({self.name}, dim={self.dim})"


def dense(mat) -> np.ndarray:
    return mat.toarray() if sp.issparse(mat) else np.asarray(mat, dtype=float)


# ---------------------------------------------------------------------------
# problems


@dataclass(frozen=True, eq=False)
class OperatorProblem:
    """Evaluator for a(x, y) = <A(x), y> and <b, y> on a pair of discrete spaces."""

    trial: Any
    test: Any
    action: Callable[[np.ndarray], np.ndarray]
    rhs: np.ndarray
    jacobian: Callable[[np.ndarray], Any] | None = None
    name: str = "problem"
    linear: bool = False
    rhs_dual_norm: float | None = None
    distance: Callable | None = None  # (x_fine, coarse_problem, x_coarse) -> float
    test_map: Any = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        rhs = np.asarray(self.rhs, dtype=float)
        if rhs.shape != (self.test.dim,):
            raise InputError(f"rhs has shape {rhs.shape}, test space has dim {self.test.dim}")
        object.__setattr__(self, "rhs", rhs)

    @classmethod
    def from_form(cls, form, trial, test, rhs_eval=None, **kw) -> "OperatorProblem":
        """Wrap a scalar form a(x, y), linear in y, by testing with unit vectors."""
        eye = np.eye(test.dim)

        def action(x):
            return np.array([form(x, e) for e in eye])

        rhs = np.zeros(test.dim) if rhs_eval is None else np.array([rhs_eval(e) for e in eye])
        return cls(trial, test, action, rhs, **kw)

    def form(self, x, y) -> float:
        return float(self.action(self._x(x)) @ np.asarray(y, dtype=float))

    def rhs_eval(self, y) -> float:
        return float(self.rhs @ np.asarray(y, dtype=float))

    def derivative(self, x, dx, y) -> float:
        """Gateaux derivative a'(x)(dx, y); requires an analytic Jacobian."""
        if self.jacobian is None:
            raise ConfigurationError(f"{self.name}: no analytic derivative")
        return float(np.asarray(y, dtype=float) @ (self.jacobian(self._x(x)) @ np.asarray(dx, dtype=float)))

    def with_rhs(self, rhs, rhs_dual_norm: float | None = None) -> "OperatorProblem":
        return dataclasses.replace(self, rhs=np.asarray(rhs, dtype=float), rhs_dual_norm=rhs_dual_norm)

    def _x(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.trial.dim,):
            raise InputError(f"trial vector has shape {x.shape}, expected ({self.trial.dim},)")
        return x

    @cached_property
    def b_dual_norm(self) -> float:
        """Estimate of ||b||_{Y'} (the stored value when one was supplied)."""
        if self.rhs_dual_norm is not None:
            return float(self.rhs_dual_norm)
        return dual_norm(self.test, self.rhs)


def dual_norm(space, g, sweeps: int = 50) -> float:
    """||g||_{Y'} = sup_y <g, y> / ||y||_Y over the discrete test space.

    Hilbert-normed spaces use the Riesz representative.  For a W^{1,q} test
    space the supremum is attained at the minimizer of (1/q)||y||^q - <g, y>,
    which is found by damped Newton sweeps starting from the best of the test
    basis vectors and the H^1 Riesz representative.  The returned value is
    always a ratio <g, y>/||y|| of an actual y, hence a lower bound.
    """
    g = np.asarray(g, dtype=float)
    if not np.any(g):
        return 0.0
    q = getattr(space, "p", 2.0)
    if isinstance(space, DiscreteSpace) and q != 2.0:
        return _dual_norm_w1q(space, g, q, sweeps)
    riesz = _solve_gram(space, g)
    return float(np.sqrt(max(g @ riesz, 0.0)))


def _solve_gram(space, g):
    if isinstance(space, DiscreteSpace):
        return poisson_solve(space, g)
    G = space.gram
    if sp.issparse(G):
        return spla.spsolve(G.tocsc(), g)
    return scipy.linalg.solve(G, g, assume_a="pos")


def _dual_norm_w1q(space: DiscreteSpace, g, q, sweeps):
    def ratio(y):
        n = norm_w1p(space, y, q)
        return (g @ y) / n if n > 0 else 0.0

    # test basis vectors: ||e_k||^q = sum_i int |d_i v_k|^q, one scatter for all k
    elem = np.einsum("cq,cqld->cl", space.wq, np.abs(space.dphi) ** q)
    basis_norms = space.restrict(kernels.scatter_add(space.cell_dofs, elem, space.ntotal)) ** (1.0 / q)
    best = float(np.max(np.abs(g) / basis_norms))
    y = poisson_solve(space, g)
    best = max(best, ratio(y))
    # minimize E(y) = ||y||^q / q - <g, y>; gradient J_q(y) - g, Hessian from duality_jacobian
    s = (g @ y) / max(norm_w1p(space, y, q) ** q, 1e-300)
    y = y * s ** (1.0 / (q - 1.0))  # optimal scaling along the Riesz direction

    def energy(v):
        return norm_w1p(space, v, q) ** q / q - g @ v

    e = energy(y)
    for _ in range(sweeps):
        grad = duality_map(space, y, q) - g
        H = duality_jacobian(space, y, q)
        H = H + 1e-14 * sp.identity(space.dim) * H.diagonal().max()
        step = spla.spsolve(H.tocsc(), -grad)
        t = 1.0
        while t > 1e-8:
            y_new = y + t * step
            e_new = energy(y_new)
            if e_new < e:
                break
            t *= 0.5
        else:
            break
        dec = e - e_new
        y, e = y_new, e_new
        best = max(best, ratio(y))
        if dec <= 1e-15 * (abs(e) + 1e-300):
            break
    return float(best)


# ---------------------------------------------------------------------------
# test maps

TEST_MAP_KINDS = ("identity", "linear-supremizer", "linear", "duality-poisson", "mixed-shear", "custom")


@dataclass(frozen=True, eq=False)
class TestMap:
    """Map Phi from trial coordinates to test coordinates.

    ``matrix`` is set for linear kinds; ``images`` then reduces to a product.
    """

    __test__ = False  # keep pytest from collecting it

    kind: str
    apply: Callable[[np.ndarray], np.ndarray]
    matrix: Any = None
    n_estimate: float | None = None
    per_level: bool = False

    def __post_init__(self):
        if self.kind not in TEST_MAP_KINDS:
            raise ConfigurationError(f"unknown test map kind {self.kind!r}")
        if self.n_estimate is not None and not self.n_estimate >= 0:
            raise ConfigurationError("N(Phi) estimate must be nonnegative")

    @property
    def is_linear(self) -> bool:
        return self.kind == "identity" or self.matrix is not None

    def __call__(self, x) -> np.ndarray:
        return self.apply(np.asarray(x, dtype=float))

    def images(self, basis) -> np.ndarray | None:
        """Columns Phi(basis[:, i]); None stands for the identity on nodal coordinates."""
        if basis is None:
            if self.kind == "identity":
                return None
            if self.matrix is not None:
                return self.matrix
            raise ConfigurationError("nonlinear test map needs an explicit trial basis")
        if self.kind == "identity":
            return basis
        if self.matrix is not None:
            return np.asarray(self.matrix @ basis)
        return np.column_stack([self.apply(basis[:, i]) for i in range(basis.shape[1])])

    @classmethod
    def identity(cls) -> "TestMap":
        return cls("identity", lambda x: x, n_estimate=1.0)

    @classmethod
    def linear(cls, matrix, kind: str = "linear", n_estimate: float | None = None) -> "TestMap":
        M = matrix

        def apply(x):
            return np.asarray(M @ x)

        return cls(kind, apply, matrix=M, n_estimate=n_estimate)

    @classmethod
    def duality_poisson(cls, space: DiscreteSpace, p: float) -> "TestMap":
        """Phi(u) = z solving (grad z, grad v) = <J_p(u), v>; the identity when p = 2."""
        if p == 2.0:
            return cls.identity()

        def apply(u):
            return poisson_solve(space, duality_map(space, u, p))

        return cls("duality-poisson", apply)


def _unit_directions(space, count: int, rng) -> np.ndarray:
    out = []
    while len(out) < count:
        d = rng.standard_normal(space.dim)
        n = space.norm(d)
        if n > 0:
            out.append(d / n)
    return np.array(out)


# ---------------------------------------------------------------------------
# residuals


def _check_trial(problem: OperatorProblem, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.trial.dim,):
        raise InputError(f"trial vector has shape {x.shape}, expected ({problem.trial.dim},)")
    return x


def assemble_residual(problem: OperatorProblem, phi: TestMap, x, basis=None) -> np.ndarray:
    """r_i = a(x, Phi(v_i)) - <b, Phi(v_i)> for the trial basis vectors v_i.

    ``basis`` holds the v_i as columns in trial coordinates; None means the
    coordinate (nodal) basis.
    """
    return TestedSystem(problem, phi, basis).residual(x)


def coercivity_pairing(problem: OperatorProblem, phi: TestMap, x) -> float:
    """a(x, Phi(x))."""
    x = _check_trial(problem, x)
    return float(problem.action(x) @ phi(x))


class TestedSystem:
    """The square system x -> T^T (A(x) - b) with T = [Phi(v_1), ..., Phi(v_n)].

    The test images are fixed, so the Jacobian is T^T A'(x).
    """

    __test__ = False

    def __init__(self, problem: OperatorProblem, phi: TestMap, basis=None):
        self.problem = problem
        self.phi = phi
        if basis is not None:
            basis = np.asarray(basis, dtype=float)
            if basis.shape[0] != problem.trial.dim:
                raise InputError("basis rows must match the trial dimension")
        self.basis = basis
        T = phi.images(basis)
        if T is not None and T.shape[0] != problem.test.dim:
            raise InputError(f"test images have {T.shape[0]} rows, test space has dim {problem.test.dim}")
        self.T = T
        self.dim = problem.trial.dim

    def _test(self, v):
        if self.T is None:
            return v
        return np.asarray(self.T.T @ v)

    def residual(self, x) -> np.ndarray:
        x = _check_trial(self.problem, x)
        return self._test(self.problem.action(x) - self.problem.rhs)

    @cached_property
    def rhs_norm(self) -> float:
        return float(np.linalg.norm(self._test(self.problem.rhs)))

    def jacobian(self, x, mode: str = "analytic", step: float = 1e-6):
        if mode == "analytic" and self.problem.jacobian is not None:
            J = self.problem.jacobian(x)
            if self.T is None:
                return J
            if sp.issparse(J):
                return np.asarray((J.T @ self.T).T)
            return np.asarray(self.T.T @ J)
        return self.fd_jacobian(x, step)

    def fd_jacobian(self, x, step: float = 1e-6) -> np.ndarray:
        """Central differences with step ``step * (1 + ||x||)``."""
        x = np.asarray(x, dtype=float)
        h = step * (1.0 + np.linalg.norm(x))
        cols = []
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = h
            cols.append((self.residual(x + e) - self.residual(x - e)) / (2 * h))
        return np.column_stack(cols)


# ---------------------------------------------------------------------------
# diagnostics


def estimate_N(phi: TestMap, trial, samples: int, radii: Sequence[float], seed: int, test=None) -> float:
    """max over sampled unit directions d and the two largest radii of ||Phi(rho d)||_Y / rho."""
    radii = sorted(float(r) for r in radii)
    if len(radii) < 2:
        raise ConfigurationError("need at least two radii")
    if samples < 1:
        raise ConfigurationError("need at least one sample")
    test = trial if test is None else test
    rng = np.random.default_rng(seed)
    best = 0.0
    for d in _unit_directions(trial, samples, rng):
        for rho in radii[-2:]:
            best = max(best, test.norm(phi(rho * d)) / rho)
    return float(best)


def check_H1_discrete(problem: OperatorProblem, x, directions, tol: float = 1e-6,
                      steps: Sequence[float] | None = None, probes: int = 8, seed: int = 0) -> bool:
    """Sampled norm-continuity of x -> a(x, y) at ``x``.

    For each direction d, |a(x + h d, y) - a(x, y)| must drop below
    tol * (1 + max_y |a(x, y)|) at the smallest step h, for random unit y.
    """
    x = _check_trial(problem, x)
    steps = sorted(steps or [10.0**-k for k in range(1, 9)], reverse=True)
    rng = np.random.default_rng(seed)
    ys = rng.standard_normal((probes, problem.test.dim))
    ys /= np.array([problem.test.norm(y) for y in ys])[:, None]
    base = ys @ problem.action(x)
    scale = 1.0 + np.max(np.abs(base))
    for d in directions:
        d = np.asarray(d, dtype=float)
        if not np.any(d):
            raise InputError("directions must be nonzero")
        d = d / problem.trial.norm(d)
        jumps = [np.max(np.abs(ys @ problem.action(x + h * d) - base)) for h in steps]
        if not np.all(np.isfinite(jumps)) or jumps[-1] > tol * scale:
            return False
    return True


def linearity_defect(problem: OperatorProblem, samples: int = 5, seed: int = 0) -> float:
    """max |a(x, alpha y1 + y2) - alpha a(x, y1) - a(x, y2)| over random samples."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        x = rng.standard_normal(problem.trial.dim)
        y1, y2 = rng.standard_normal((2, problem.test.dim))
        alpha = rng.standard_normal()
        lhs = problem.form(x, alpha * y1 + y2)
        rhs = alpha * problem.form(x, y1) + problem.form(x, y2)
        worst = max(worst, abs(lhs - rhs) / (1.0 + abs(lhs)))
    return worst


# ---------------------------------------------------------------------------
# hierarchies


@dataclass(frozen=True, eq=False)
class Level:
    index: int
    problem: OperatorProblem
    phi: TestMap

    @property
    def dim(self) -> int:
        return self.problem.trial.dim


class GalerkinHierarchy:
    """Nested trial spaces with their problems and (possibly level-dependent) test maps."""

    def __init__(self, levels: Sequence[Level]):
        levels = list(levels)
        dims = [lv.dim for lv in levels]
        if any(b <= a for a, b in zip(dims, dims[1:])):
            raise ConfigurationError(f"trial dimensions must strictly increase, got {dims}")
        self.levels = tuple(levels)

    @classmethod
    def build(cls, refinements: Sequence[int], factory: Callable[[int], tuple]) -> "GalerkinHierarchy":
        """``factory(refinement)`` returns (problem, phi) for one level."""
        return cls([Level(k, *factory(r)) for k, r in enumerate(refinements)])

    def __len__(self) -> int:
        return len(self.levels)

    def __iter__(self):
        return iter(self.levels)

    def increment(self, k: int, x_coarse, x_fine) -> float:
        """||x_{k+1} - x_k||_X measured on level k+1."""
        coarse, fine = self.levels[k].problem, self.levels[k + 1].problem
        if fine.distance is not None:
            return float(fine.distance(x_fine, coarse, x_coarse))
        if isinstance(fine.trial, DiscreteSpace) and isinstance(coarse.trial, DiscreteSpace):
            return fine.trial.norm(x_fine - prolong(coarse.trial, x_coarse, fine.trial))
        raise ConfigurationError(f"{fine.name}: no way to compare solutions across levels")


# ---------------------------------------------------------------------------
# registry of named problem families (used by the command line)

PROBLEM_REGISTRY: dict[str, Callable] = {}


def register_problem(name: str):
    def deco(fn):
        PROBLEM_REGISTRY[name] = fn
        return fn

    return deco
