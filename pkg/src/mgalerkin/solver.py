"""Damped Newton, load/parameter continuation and ball multistart for r(x) = 0."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from mgalerkin.errors import ConfigurationError
from mgalerkin.operator import OperatorProblem, TestedSystem, TestMap


@dataclass(frozen=True)
class SolverConfig:
    tol_residual: float = 1e-10
    max_newton_its: int = 50
    damping: tuple[float, ...] = (1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625, 0.0078125)
    homotopy_steps: int = 4
    multistart: int = 8
    seed: int = 0
    jacobian_mode: str = "analytic"
    fd_step: float = 1e-6
    orthonormalize: bool = True
    max_dense: int = 2000
    min_homotopy_step: float = 1e-6

    def __post_init__(self):
        if not self.tol_residual > 0:
            raise ConfigurationError("tol_residual must be positive")
        if not self.damping or any(not 0 < f <= 1 for f in self.damping):
            raise ConfigurationError("damping schedule must be a nonempty list of factors in (0, 1]")
        if self.homotopy_steps < 1 or self.multistart < 1 or self.max_newton_its < 0:
            raise ConfigurationError("step and start counts must be positive")
        if self.jacobian_mode not in ("analytic", "finite-difference"):
            raise ConfigurationError(f"unknown jacobian mode {self.jacobian_mode!r}")


@dataclass
class SolveReport:
    solution: np.ndarray
    residual_norm: float
    newton_trace: list[float]
    solution_norm_x: float
    converged: bool
    tolerance: float
    starts_used: int = 1
    best_start: int = 0
    iterations: int = 0
    message: str = ""
    path: list[tuple[float, float]] = field(default_factory=list)
    traces: list[list[float]] = field(default_factory=list)

    def summary(self) -> dict:
        """JSON-ready digest (the solution vector itself is omitted)."""
        return {
            "converged": self.converged,
            "residual_norm": self.residual_norm,
            "tolerance": self.tolerance,
            "solution_norm_x": self.solution_norm_x,
            "iterations": self.iterations,
            "starts_used": self.starts_used,
            "best_start": self.best_start,
            "newton_trace": list(self.newton_trace),
            "path": [list(p) for p in self.path],
            "message": self.message,
        }


def residual_frame(problem: OperatorProblem, config: SolverConfig):
    """Trial basis whose images are tested: orthonormal in the trial Gram when affordable."""
    if not config.orthonormalize or problem.trial.dim > config.max_dense:
        return None
    frame = getattr(problem.trial, "orthonormal_frame", None)
    return None if frame is None else frame()


def _system(problem, phi, config, basis):
    if basis is None:
        basis = residual_frame(problem, config)
    return TestedSystem(problem, phi, basis)


def _linear_solve(J, r):
    if sp.issparse(J):
        n = J.shape[0]
        if n <= 2000:
            return spla.spsolve(J.tocsc(), r)
        ilu = spla.spilu(J.tocsc(), drop_tol=1e-5, fill_factor=20)
        M = spla.LinearOperator(J.shape, ilu.solve)
        dx, info = spla.gmres(J, r, M=M, rtol=1e-12, restart=200, maxiter=20)
        if info != 0:
            raise np.linalg.LinAlgError("gmres did not converge")
        return dx
    lu, piv = scipy.linalg.lu_factor(J, check_finite=True)
    if np.min(np.abs(np.diag(lu))) <= 1e-14 * np.max(np.abs(np.diag(lu))):
        raise np.linalg.LinAlgError("singular Jacobian")
    return scipy.linalg.lu_solve((lu, piv), r)


def newton_solve(problem: OperatorProblem, phi: TestMap, config: SolverConfig = SolverConfig(),
                 x0=None, basis=None, system: TestedSystem | None = None) -> SolveReport:
    """Damped Newton on r(x) = T^T (A(x) - b).

    Converged iff ||r|| <= tol * (1 + ||T^T b||).  A step is accepted at the
    first damping factor that strictly reduces ||r||.
    """
    system = system or _system(problem, phi, config, basis)
    x = np.zeros(problem.trial.dim) if x0 is None else np.array(x0, dtype=float)
    tol = config.tol_residual * (1.0 + system.rhs_norm)
    r = system.residual(x)
    rn = float(np.linalg.norm(r))
    trace = [rn]
    message = ""
    its = 0
    while rn > tol and its < config.max_newton_its and np.isfinite(rn):
        try:
            J = system.jacobian(x, config.jacobian_mode, config.fd_step)
            dx = _linear_solve(J, -r)
        except (np.linalg.LinAlgError, ValueError, RuntimeError) as exc:
            message = f"linear solve failed: {exc}"
            break
        for f in config.damping:
            x_try = x + f * dx
            r_try = system.residual(x_try)
            rn_try = float(np.linalg.norm(r_try))
            if np.isfinite(rn_try) and rn_try < rn:
                break
        else:
            message = "damping exhausted"
            break
        x, r, rn = x_try, r_try, rn_try
        trace.append(rn)
        its += 1
    converged = bool(rn <= tol)
    if not converged and not message:
        message = "iteration limit" if np.isfinite(rn) else "non-finite residual"
    return SolveReport(
        solution=x,
        residual_norm=rn,
        newton_trace=trace,
        solution_norm_x=float(problem.trial.norm(x)),
        converged=converged,
        tolerance=tol,
        iterations=its,
        message=message,
    )


def homotopy_solve(family: Callable[[float], OperatorProblem], phi, config: SolverConfig = SolverConfig(),
                   x0=None) -> SolveReport:
    """Continuation in t from 0 to 1 with step halving on failure.

    ``phi`` is a TestMap or a callable t -> TestMap.  The returned report is the
    final Newton report, with ``path`` holding (t, ||x_t||_X) for accepted steps
    and ``iterations`` the total Newton count.
    """
    phi_at = phi if callable(phi) and not isinstance(phi, TestMap) else (lambda t: phi)
    prob = family(0.0)
    rep = newton_solve(prob, phi_at(0.0), config, x0)
    total = rep.iterations
    if not rep.converged:
        rep.message = f"start problem failed: {rep.message}"
        return rep
    path = [(0.0, rep.solution_norm_x)]
    t, x = 0.0, rep.solution
    dt0 = 1.0 / config.homotopy_steps
    dt = dt0
    while t < 1.0:
        t_new = min(1.0, t + dt)
        trial = newton_solve(family(t_new), phi_at(t_new), config, x)
        total += trial.iterations
        if trial.converged:
            t, x, rep = t_new, trial.solution, trial
            path.append((t, rep.solution_norm_x))
            dt = min(2.0 * dt, dt0)
        else:
            dt *= 0.5
            if dt < config.min_homotopy_step:
                trial.message = f"continuation step underflow at t={t:.6g}"
                trial.path = path
                trial.iterations = total
                trial.converged = False
                return trial
    rep.path = path
    rep.iterations = total
    return rep


def thread_count() -> int:
    """Worker cap from MG_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("MG_THREADS", "1")))
    except ValueError:
        return 1


def ball_starts(problem: OperatorProblem, radius: float, count: int, seed: int) -> list[np.ndarray]:
    """Seeded points uniformly distributed in the X-norm ball of the given radius."""
    if not radius > 0:
        raise ConfigurationError("radius must be positive")
    rng = np.random.default_rng(seed)
    n = problem.trial.dim
    starts = []
    while len(starts) < count:
        d = rng.standard_normal(n)
        nd = problem.trial.norm(d)
        if nd == 0:
            continue
        starts.append(radius * rng.random() ** (1.0 / n) * d / nd)
    return starts


def ball_multistart(problem: OperatorProblem, phi: TestMap, config: SolverConfig = SolverConfig(),
                    radius: float = 1.0) -> SolveReport:
    """Newton from ``config.multistart`` seeded starts in the ball; lowest residual wins.

    Ties go to the earliest start.  Starts run on up to MG_THREADS threads and
    are merged in start order.
    """
    starts = ball_starts(problem, radius, config.multistart, config.seed)
    system = _system(problem, phi, config, None)

    def run(x0):
        return newton_solve(problem, phi, config, x0, system=system)

    workers = min(thread_count(), len(starts))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            reports = list(pool.map(run, starts))
    else:
        reports = [run(x0) for x0 in starts]
    pool_ = [i for i, r in enumerate(reports) if r.converged] or range(len(reports))
    idx = min(pool_, key=lambda i: reports[i].residual_norm)  # min keeps the first among ties
    best = reports[idx]
    best.starts_used = len(reports)
    best.best_start = idx
    best.traces = [r.newton_trace for r in reports]
    if not best.converged:
        best.message = f"all {len(reports)} starts failed"
    return best
