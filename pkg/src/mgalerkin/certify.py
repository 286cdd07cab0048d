"""Sampled certificates for coercivity, existence, boundedness and uniqueness,
and the inf-sup analysis of linear problems.

All classifications are heuristics over a finite, seeded sampling grid.
They produce evidence for tests and reports, not proofs.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from mgalerkin.errors import ConfigurationError, InputError, UnsupportedConfigurationError
from mgalerkin.fnspace import DiscreteSpace
from mgalerkin.operator import (
    GalerkinHierarchy,
    OperatorProblem,
    TestMap,
    coercivity_pairing,
    dense,
    estimate_N,
)
from mgalerkin.solver import SolverConfig, homotopy_solve, newton_solve, thread_count

VERDICTS = ("H2", "H2prime", "fail")
ZERO_TOL = 1e-12  # relative threshold for a vanishing monotonicity pairing
MAX_SPECTRAL_DIM = 2000


def _pmap(fn, items):
    """Map preserving order; threaded when MG_THREADS > 1."""
    items = list(items)
    workers = min(thread_count(), len(items))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def _clean(v):
    """JSON-safe float (non-finite values become strings)."""
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else str(v)


# ---------------------------------------------------------------------------
# direction sampling


def _random_directions(space, count: int, rng) -> list[np.ndarray]:
    out = []
    while len(out) < count:
        d = rng.standard_normal(space.dim)
        n = space.norm(d)
        if n > 0:
            out.append(d / n)
    return out


def spectral_directions(problem: OperatorProblem, phi: TestMap, count: int = 2) -> list[np.ndarray]:
    """Unit directions minimizing the linearized pairing a'(0)(d, Phi d) / ||d||^2.

    These are the lowest generalized eigenvectors of sym(P^T A'(0)) against
    the trial Gram matrix, with P the matrix of a linear Phi.  They expose
    near-resonant directions that random sampling almost never hits.  Empty
    when the problem has no Jacobian, Phi is nonlinear, or the space is large.
    """
    n = problem.trial.dim
    if problem.jacobian is None or not phi.is_linear or n > MAX_SPECTRAL_DIM or count < 1:
        return []
    if problem.trial.dim != problem.test.dim:
        return []
    J = dense(problem.jacobian(np.zeros(n)))
    P = np.eye(n) if phi.kind == "identity" else dense(phi.matrix)
    Q = P.T @ J
    Q = 0.5 * (Q + Q.T)
    G = dense(problem.trial.gram)
    k = min(count, n)
    vecs = scipy.linalg.eigh(Q, G, subset_by_index=[0, k - 1])[1]
    out = []
    for i in range(k):
        d = vecs[:, i]
        d = d / problem.trial.norm(d)
        out.append(d * np.sign(d[np.argmax(np.abs(d))]))
    return out


# ---------------------------------------------------------------------------
# coercivity


@dataclass
class CoercivityCertificate:
    verdict: str
    Mestimate: float | None
    Nphi: float
    solvabilityMargin: float | None
    evidence: list[dict]
    seed: int
    radii: list[float] = field(default_factory=list)
    directions: int = 0
    b_norm: float = 0.0

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise InputError(f"unknown verdict {self.verdict!r}")
        if self.verdict == "H2prime" and not (self.Mestimate is not None and self.Mestimate > 0):
            raise InputError("an H2prime verdict needs a positive M estimate")

    def ratio_table(self) -> np.ndarray:
        """Ratios as a (direction, radius) array."""
        nd, nr = self.directions, len(self.radii)
        table = np.full((nd, nr), np.nan)
        for row in self.evidence:
            table[row["direction"], row["radius_index"]] = row["ratio"]
        return table

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("Mestimate", "Nphi", "solvabilityMargin", "b_norm"):
            out[key] = _clean(out[key])
        out["radii"] = [_clean(r) for r in self.radii]
        out["evidence"] = [{k: _clean(v) if k in ("radius", "ratio") else v for k, v in row.items()}
                           for row in self.evidence]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def probe_coercivity(problem: OperatorProblem, phi: TestMap | None = None, directions: int = 8,
                     radii: Sequence[float] = (1.0, 10.0, 100.0, 1000.0), seed: int = 0,
                     spectral: int = 2) -> CoercivityCertificate:
    """Classify the growth of a(rho d, Phi(rho d)) / (rho ||d||) on a direction x radius grid.

    The directions are ``directions`` seeded random unit vectors followed by
    ``spectral`` linearized minimizers (see :func:`spectral_directions`).

    Verdicts:
      fail     some ratio at the largest radius is <= 1e-10 times the largest
               ratio there (nonpositive up to rounding);
      H2       the minimum over directions grows by a factor >= 2 from the
               largest radius a decade below the top to the top radius;
      H2prime  otherwise, with M the minimum ratio at the largest radius.
    """
    phi = phi or problem.test_map
    if phi is None:
        raise ConfigurationError(f"{problem.name}: no test map")
    radii = sorted(float(r) for r in radii)
    if directions < 8:
        raise ConfigurationError("need at least 8 directions")
    if len(radii) < 4 or radii[0] <= 0 or radii[-1] / radii[0] < 100.0 * (1 - 1e-12):
        raise ConfigurationError("need at least 4 positive radii spanning two decades")
    rng = np.random.default_rng(seed)
    dirs = _random_directions(problem.trial, directions, rng) + spectral_directions(problem, phi, spectral)

    def ratios(d):
        nd = problem.trial.norm(d)
        return [coercivity_pairing(problem, phi, rho * d) / (rho * nd) for rho in radii]

    table = np.array(_pmap(ratios, dirs))
    evidence = [
        {"direction": i, "radius_index": j, "radius": radii[j], "ratio": float(table[i, j]),
         "kind": "random" if i < directions else "spectral"}
        for i in range(len(dirs)) for j in range(len(radii))
    ]
    top = table[:, -1]
    ref = max(j for j, r in enumerate(radii) if r <= radii[-1] / 10.0 * (1 + 1e-12))
    low_ref = np.min(table[:, ref])
    top_min = float(np.min(top))
    scale = float(np.max(np.abs(top)))
    if not np.all(np.isfinite(table)) or top_min <= 1e-10 * scale:
        verdict, M = "fail", None
    elif low_ref > 0 and top_min >= 2.0 * low_ref:
        verdict, M = "H2", None
    else:
        verdict, M = "H2prime", top_min
    N = estimate_N(phi, problem.trial, directions, radii, seed, problem.test)
    b = problem.b_dual_norm
    margin = M / N - b if (verdict == "H2prime" and N > 0) else None
    return CoercivityCertificate(verdict, M, N, margin, evidence, seed, radii, len(dirs), b)


def classical_coercivity_ratios(problem: OperatorProblem, points) -> np.ndarray:
    """a(x, x) / ||x|| without going through a test map (requires X = Y)."""
    return np.array([problem.form(x, x) / problem.trial.norm(x) for x in points])


# ---------------------------------------------------------------------------
# existence on spheres


def sphere_surplus(problem: OperatorProblem, phi: TestMap | None = None, radius: float = 1.0,
                   samples: int = 64, seed: int = 0) -> tuple[bool, float]:
    """Sampled min of a(x, Phi x) - <b, Phi x> over the sphere ||x|| = radius.

    A positive minimum is evidence that a discrete solution lies inside the ball.
    """
    phi = phi or problem.test_map
    if not radius > 0:
        raise ConfigurationError("radius must be positive")
    if samples < 16:
        raise ConfigurationError("need at least 16 samples")
    rng = np.random.default_rng(seed)
    dirs = _random_directions(problem.trial, samples, rng) + spectral_directions(problem, phi)

    def surplus(d):
        x = radius * d
        y = phi(x)
        return float((problem.action(x) - problem.rhs) @ y)

    vals = _pmap(surplus, dirs)
    worst = float(min(vals))
    return bool(worst > 0), worst


# ---------------------------------------------------------------------------
# boundedness of discrete solutions


@dataclass
class BoundednessTrace:
    levels: list[tuple[int, float]]
    growthFlag: bool
    increments: list[float] = field(default_factory=list)
    residuals: list[float] = field(default_factory=list)
    span_dims: list[int] = field(default_factory=list)
    failed_level: int | None = None
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "levels": [[int(d), _clean(n)] for d, n in self.levels],
            "growthFlag": self.growthFlag,
            "increments": [_clean(v) for v in self.increments],
            "residuals": [_clean(v) for v in self.residuals],
            "span_dims": list(self.span_dims),
            "failed_level": self.failed_level,
            "message": self.message,
        }


def growth_flag(norms: Sequence[float]) -> bool:
    """True when the norms are non-finite or grow superlinearly in the level index.

    Superlinear here means the last two successive differences are positive
    and increasing.
    """
    norms = np.asarray(norms, dtype=float)
    if not np.all(np.isfinite(norms)):
        return True
    if len(norms) < 3:
        return False
    d = np.diff(norms)
    return bool(d[-1] > 0 and d[-2] > 0 and d[-1] > d[-2])


def _span_dim(problem, phi) -> int:
    n = problem.trial.dim
    if phi.kind == "identity":
        return n
    if phi.is_linear and n <= 500:
        return int(np.linalg.matrix_rank(dense(phi.matrix)))
    return n


def _solve_level(problem, phi, config, x0=None):
    rep = newton_solve(problem, phi, config, x0)
    if rep.converged:
        return rep

    def family(t):
        return problem.with_rhs(t * problem.rhs)

    alt = homotopy_solve(family, phi, config)
    return alt if alt.converged or alt.residual_norm < rep.residual_norm else rep


def track_boundedness(hierarchy: GalerkinHierarchy, phi: TestMap | None = None,
                      config: SolverConfig = SolverConfig()) -> BoundednessTrace:
    """Solve every level and record (dimension, ||x_n||_X).

    ``phi`` overrides the per-level test maps.  The trace stops at the first
    level that fails to converge.
    """
    levels, incs, res, spans = [], [], [], []
    prev = None
    failed, message = None, ""
    for k, lv in enumerate(hierarchy):
        ph = phi or lv.phi
        rep = _solve_level(lv.problem, ph, config)
        if not rep.converged:
            failed, message = k, f"level {k} did not converge: {rep.message}"
            break
        levels.append((lv.dim, rep.solution_norm_x))
        res.append(rep.residual_norm)
        spans.append(_span_dim(lv.problem, ph))
        if prev is not None:
            incs.append(hierarchy.increment(k - 1, prev, rep.solution))
        prev = rep.solution
    flag = growth_flag([n for _, n in levels])
    return BoundednessTrace(levels, flag, incs, res, spans, failed, message)


# ---------------------------------------------------------------------------
# uniqueness


def _same_space(a, b) -> bool:
    if a is b:
        return True
    if type(a) is not type(b) or a.dim != b.dim:
        return False
    if isinstance(a, DiscreteSpace):
        return a.mesh is b.mesh and a.degree == b.degree and a.p == b.p
    ga, gb = a.gram, b.gram
    if sp.issparse(ga) or sp.issparse(gb):
        return (sp.csr_matrix(ga) != sp.csr_matrix(gb)).nnz == 0
    return bool(np.array_equal(ga, gb))


def uniqueness_sample(problem: OperatorProblem, pairs: int = 200, seed: int = 0,
                      scale: float = 1.0) -> tuple[float, list[dict]]:
    """Sign of <A(x) - A(y), x - y> over sampled pairs (requires X = Y).

    Pairs are seeded random points of X-norm up to ``2 * scale``, plus pairs
    differing along the spectral directions of the linearization.  A value
    counts as a violation when it is below ZERO_TOL * (|A(x)| + |A(y)|) |x - y|,
    which measures the pairing against the size of the terms that cancel.
    """
    if pairs < 100:
        raise ConfigurationError("need at least 100 pairs")
    if not _same_space(problem.trial, problem.test):
        raise UnsupportedConfigurationError("uniqueness sampling needs identical trial and test spaces")
    rng = np.random.default_rng(seed)
    sp_dirs = spectral_directions(problem, TestMap.identity())
    n = problem.trial.dim
    plist = []
    for _ in range(pairs):
        x, y = rng.standard_normal((2, n))
        x *= scale * 2.0 * rng.random() / problem.trial.norm(x)
        y *= scale * 2.0 * rng.random() / problem.trial.norm(y)
        plist.append((x, y))
    for d in sp_dirs:
        for _ in range(4):
            x = rng.standard_normal(n)
            x *= scale * rng.random() / problem.trial.norm(x)
            plist.append((x, x + scale * rng.random() * d))

    def pairing(xy):
        x, y = xy
        Ax, Ay = problem.action(x), problem.action(y)
        dx = x - y
        return float((Ax - Ay) @ dx), float((np.linalg.norm(Ax) + np.linalg.norm(Ay)) * np.linalg.norm(dx))

    vals = _pmap(pairing, plist)
    violations = []
    good = 0
    for i, (v, s) in enumerate(vals):
        if v > ZERO_TOL * s and s > 0:
            good += 1
        else:
            violations.append({"pair": i, "value": v, "scale": s,
                               "kind": "random" if i < pairs else "spectral"})
    return good / len(vals), violations


# ---------------------------------------------------------------------------
# linear inf-sup theory


@dataclass
class InfSupReport:
    gammaXY: float
    gammaYX: float
    supremizerMap: Any
    discrepancy: float
    singular_values: list[float] = field(default_factory=list)
    warning: str = ""

    def to_dict(self) -> dict:
        return {
            "gammaXY": _clean(self.gammaXY),
            "gammaYX": _clean(self.gammaYX),
            "discrepancy": _clean(self.discrepancy),
            "singular_values": [_clean(s) for s in self.singular_values],
            "supremizer_norm": _clean(self.supremizerMap.n_estimate),
            "warning": self.warning,
        }


def _spd(G, name: str) -> np.ndarray:
    G = dense(G)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise InputError(f"{name} must be square")
    if not np.all(np.isfinite(G)):
        raise InputError(f"{name} has non-finite entries")
    if not np.allclose(G, G.T, rtol=1e-10, atol=1e-14 * max(np.max(np.abs(G)), 1e-300)):
        raise InputError(f"{name} is not symmetric")
    try:
        np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        raise InputError(f"{name} is not positive definite") from None
    return 0.5 * (G + G.T)


def _check_pair(A, GX, GY):
    A = dense(A)
    if A.ndim != 2 or not np.all(np.isfinite(A)):
        raise InputError("A must be a finite 2D array")
    GX, GY = _spd(GX, "GX"), _spd(GY, "GY")
    if A.shape != (GY.shape[0], GX.shape[0]):
        raise InputError(f"A has shape {A.shape}, expected ({GY.shape[0]}, {GX.shape[0]})")
    return A, GX, GY


def _min_gen_eig(S, G) -> float:
    S = 0.5 * (S + S.T)
    return float(scipy.linalg.eigh(S, G, eigvals_only=True, subset_by_index=[0, 0])[0])


def infsup_constants(A, GX, GY) -> InfSupReport:
    """Both inf-sup constants of the form <A x, y> (A: X -> Y', shape dim Y x dim X).

    gammaXY = inf_y sup_x <Ax, y> / (|x|_X |y|_Y) is the square root of the
    smallest eigenvalue of A GX^{-1} A^T against GY; gammaYX = inf_x sup_y,
    from A^T GY^{-1} A against GX.  Both are computed as the smallest singular
    value of LY^{-1} A LX^{-T} (G = L L^T), which keeps full accuracy near
    singularity.  The supremizer map is x -> GY^{-1} A x.
    """
    A, GX, GY = _check_pair(A, GX, GY)
    LX = np.linalg.cholesky(GX)
    LY = np.linalg.cholesky(GY)
    W = scipy.linalg.solve_triangular(LY, A, lower=True)
    W = scipy.linalg.solve_triangular(LX, W.T, lower=True).T  # LY^{-1} A LX^{-T}
    sv = scipy.linalg.svd(W, compute_uv=False)
    AY = scipy.linalg.cho_solve((LY, True), A)  # GY^{-1} A
    smax = float(sv[0]) if len(sv) else 0.0
    smin = float(sv[-1]) if len(sv) else 0.0
    # the eigenvalue forms square the conditioning, so read both off the SVD;
    # the ordering with more test than trial directions is exactly zero
    m, n = A.shape
    gxy = smin if m <= n else 0.0
    gyx = smin if n <= m else 0.0
    tiny = 1e-12 * max(smax, 1e-300)
    gxy = 0.0 if gxy <= tiny else gxy
    gyx = 0.0 if gyx <= tiny else gyx
    warning = ""
    if max(gxy, gyx) == 0.0 or (m == n and min(gxy, gyx) == 0.0):
        warning = "singular operator: inf-sup constant is zero"
    sup = TestMap.linear(AY, kind="linear-supremizer", n_estimate=smax)
    return InfSupReport(gxy, gyx, sup, abs(gxy - gyx), [float(s) for s in sv], warning)


def supremizer_coercivity_check(A, GX, GY) -> float:
    """alpha = min over |x|_X = 1 of <A x, GY^{-1} A x>, the coercivity of A with Phi the supremizer."""
    A, GX, GY = _check_pair(A, GX, GY)
    S = A.T @ scipy.linalg.solve(GY, A, assume_a="pos")
    return _min_gen_eig(S, GX)
