"""Command line front end: ``mgalerkin run | certify | infsup | converge``.

Settings come from an INI file (``--config``) with sections [problem],
[solver], [certify] and [output]; every key has a mirroring command line
flag, and flags override the file.  Unknown sections or keys are rejected.

Exit codes: 0 success, 1 configuration error, 2 nonconvergence or a failed
convergence check.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import io
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

import mgalerkin.problems  # noqa: F401  (registers the named cases)
from mgalerkin.certify import (
    BoundednessTrace,
    growth_flag,
    infsup_constants,
    probe_coercivity,
    supremizer_coercivity_check,
)
from mgalerkin.errors import MGalerkinError
from mgalerkin.operator import PROBLEM_REGISTRY, GalerkinHierarchy, Level, dense, dual_norm
from mgalerkin.solver import SolverConfig, homotopy_solve, newton_solve

SCHEMA_VERSION = 1
NONLINEAR_CASES = ("semilinear", "semilinear-p", "mixed-poisson", "ns-cavity", "saturating")
LINEAR_ONLY_CASES = ("identity", "taylor-hood", "rank-deficient")
STRATEGIES = ("auto", "newton", "homotopy")


class UsageError(Exception):
    """Bad configuration; reported with exit code 1."""


# ---------------------------------------------------------------------------
# configuration

# section -> key -> (type, default)
SCHEMA = {
    "problem": {
        "case": (str, "semilinear"),
        "levels": (str, "3"),
        "coarsest": (int, -1),
        "dim": (int, 1),
        "degree": (int, 1),
        "p": (float, 2.0),
        "forcing": (str, "sin"),
        "lambda": (float, 5.0),
        "load": (float, 1.0),
        "nu": (float, 0.01),
        "boundary": (str, "lid"),
        "lid_speed": (float, 1.0),
        "shift": (str, "discrete"),
    },
    "solver": {
        "tol_residual": (float, 1e-10),
        "max_newton_its": (int, 50),
        "homotopy_steps": (int, 4),
        "multistart": (int, 8),
        "seed": (int, 0),
        "jacobian_mode": (str, "analytic"),
        "strategy": (str, "auto"),
    },
    "certify": {
        "directions": (int, 8),
        "radii": (str, "1,10,100,1000"),
    },
    "output": {
        "path": (str, ""),
        "csv": (str, ""),
    },
}


@dataclass(frozen=True)
class RunConfig:
    case: str = "semilinear"
    levels: tuple[int, ...] = (2, 3, 4)
    dim: int = 1
    degree: int = 1
    p: float = 2.0
    forcing: str = "sin"
    lam: float = 5.0
    load: float = 1.0
    nu: float = 0.01
    boundary: str = "lid"
    lid_speed: float = 1.0
    shift: str = "discrete"
    solver: dict = field(default_factory=dict)
    directions: int = 8
    radii: tuple[float, ...] = (1.0, 10.0, 100.0, 1000.0)
    seed: int = 0
    strategy: str = "auto"
    path: str = ""
    csv: str = ""

    def solver_config(self) -> SolverConfig:
        return SolverConfig(seed=self.seed, **self.solver)

    def params(self) -> dict:
        return {
            "dim": self.dim, "degree": self.degree, "p": self.p, "forcing": self.forcing,
            "lam": self.lam, "load": self.load, "nu": self.nu, "boundary": self.boundary,
            "lid_speed": self.lid_speed, "shift": self.shift,
        }

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["levels"] = list(self.levels)
        out["radii"] = list(self.radii)
        out["solver"] = dict(sorted(self.solver.items()))
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise UsageError(f"unknown config fields: {sorted(unknown)}")
        data = dict(data)
        if "levels" in data:
            data["levels"] = tuple(int(v) for v in data["levels"])
        if "radii" in data:
            data["radii"] = tuple(float(v) for v in data["radii"])
        return cls(**data)


def _default_coarsest(case: str, dim: int) -> int:
    if case in ("ns-cavity", "taylor-hood"):
        return 2
    return 2 if dim == 1 else 1


def _parse_levels(text: str, coarsest: int) -> tuple[int, ...]:
    parts = [s.strip() for s in str(text).split(",") if s.strip()]
    try:
        vals = [int(s) for s in parts]
    except ValueError:
        raise UsageError(f"levels must be a count or a comma list of refinements, got {text!r}") from None
    if len(vals) == 1:
        if vals[0] < 1:
            raise UsageError("need at least one level")
        return tuple(range(coarsest, coarsest + vals[0]))
    if any(b <= a for a, b in zip(vals, vals[1:])) or vals[0] < 0:
        raise UsageError("explicit refinements must be nonnegative and increasing")
    return tuple(vals)


def _convert(section: str, key: str, raw):
    typ, _ = SCHEMA[section][key]
    try:
        return typ(raw)
    except (TypeError, ValueError):
        raise UsageError(f"[{section}] {key}: cannot parse {raw!r} as {typ.__name__}") from None


def read_ini(path: str) -> dict:
    """Flat {(section, key): raw string} from an INI file, rejecting unknown entries."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    out = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise UsageError(f"unknown config section [{section}]")
        for key, value in parser.items(section):
            if key not in SCHEMA[section]:
                raise UsageError(f"unknown config key [{section}] {key}")
            out[(section, key)] = value
    return out


def build_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, the INI file and command line flags."""
    raw = {(s, k): default for s, keys in SCHEMA.items() for k, (_, default) in keys.items()}
    if args.config:
        raw.update(read_ini(args.config))
    for (s, k) in list(raw):
        val = getattr(args, f"{s}__{k}", None)
        if val is not None:
            raw[(s, k)] = val
    vals = {key: _convert(s, k, v) for key, v in raw.items() for (s, k) in [key]}
    prob = {k: vals[("problem", k)] for k in SCHEMA["problem"]}
    case = prob["case"]
    if case not in PROBLEM_REGISTRY and case not in LINEAR_ONLY_CASES:
        raise UsageError(f"unknown case {case!r}")
    coarsest = prob["coarsest"] if prob["coarsest"] >= 0 else _default_coarsest(case, prob["dim"])
    levels = _parse_levels(prob["levels"], coarsest)
    try:
        radii = tuple(float(r) for r in vals[("certify", "radii")].split(","))
    except ValueError:
        raise UsageError("radii must be a comma list of numbers") from None
    strategy = vals[("solver", "strategy")]
    if strategy not in STRATEGIES:
        raise UsageError(f"unknown strategy {strategy!r}")
    solver = {k: vals[("solver", k)] for k in ("tol_residual", "max_newton_its", "homotopy_steps",
                                               "multistart", "jacobian_mode")}
    cfg = RunConfig(
        case=case, levels=levels, dim=prob["dim"], degree=prob["degree"], p=prob["p"],
        forcing=prob["forcing"], lam=prob["lambda"], load=prob["load"], nu=prob["nu"],
        boundary=prob["boundary"], lid_speed=prob["lid_speed"], shift=prob["shift"],
        solver=solver, directions=vals[("certify", "directions")], radii=radii,
        seed=vals[("solver", "seed")], strategy=strategy,
        path=vals[("output", "path")], csv=vals[("output", "csv")],
    )
    try:
        cfg.solver_config()
    except MGalerkinError as exc:
        raise UsageError(str(exc)) from None
    return cfg


# ---------------------------------------------------------------------------
# output helpers


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def dumps(report: dict) -> str:
    return json.dumps(_jsonable(report), sort_keys=True, indent=2) + "\n"


def atomic_write(path: str, text: str) -> None:
    """Write via a temporary file in the target directory and rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


CSV_COLUMNS = ("level", "refinement", "dim", "norm", "increment", "residual")


def table_csv(rows: list[dict]) -> str:
    """Convergence table with 17 significant digits and a header row."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in rows:
        out = []
        for c in CSV_COLUMNS:
            v = row.get(c)
            if v is None:
                out.append("")
            elif isinstance(v, (int, np.integer)):
                out.append(str(int(v)))
            else:
                out.append(format(float(v), ".17g"))
        w.writerow(out)
    return buf.getvalue()


def _emit(cfg: RunConfig, report: dict, rows: list[dict] | None) -> None:
    text = dumps(report)
    if cfg.path:
        atomic_write(cfg.path, text)
        csv_path = cfg.csv or (os.path.splitext(cfg.path)[0] + ".csv" if rows is not None else "")
    else:
        sys.stdout.write(text)
        csv_path = cfg.csv
    if rows is not None and csv_path:
        atomic_write(csv_path, table_csv(rows))


# ---------------------------------------------------------------------------
# solving


def build_problem(cfg: RunConfig, refinement: int):
    if cfg.case not in PROBLEM_REGISTRY:
        raise UsageError(f"case {cfg.case!r} is only available for infsup")
    return PROBLEM_REGISTRY[cfg.case](refinement, cfg.params())


def solve_level(cfg: RunConfig, refinement: int):
    problem = build_problem(cfg, refinement)
    config = cfg.solver_config()
    phi = problem.test_map
    strategy = cfg.strategy
    if strategy == "auto":
        strategy = "viscosity" if cfg.case == "ns-cavity" and cfg.nu < 1.0 else "newton"
    if strategy == "viscosity":
        nu0 = 1.0

        def family(t):
            prm = dict(cfg.params(), nu=nu0 ** (1.0 - t) * cfg.nu**t)
            return PROBLEM_REGISTRY[cfg.case](refinement, prm)

        rep = homotopy_solve(family, phi, config)
    elif strategy == "homotopy":
        rep = homotopy_solve(lambda t: problem.with_rhs(t * problem.rhs), phi, config)
    else:
        rep = newton_solve(problem, phi, config)
        if not rep.converged and cfg.strategy == "auto":
            alt = homotopy_solve(lambda t: problem.with_rhs(t * problem.rhs), phi, config)
            if alt.converged:
                rep = alt
    return problem, rep


def solve_levels(cfg: RunConfig):
    """Solve every level; returns (levels, table rows, all converged)."""
    out, rows = [], []
    prev = None
    for k, ref in enumerate(cfg.levels):
        t0 = time.perf_counter()
        problem, rep = solve_level(cfg, ref)
        elapsed = time.perf_counter() - t0
        inc = None
        if prev is not None and rep.converged and prev[1].converged:
            hier = GalerkinHierarchy([Level(0, prev[0], prev[0].test_map), Level(1, problem, problem.test_map)])
            inc = hier.increment(0, prev[1].solution, rep.solution)
        rows.append({"level": k, "refinement": ref, "dim": problem.trial.dim, "norm": rep.solution_norm_x,
                     "increment": inc, "residual": rep.residual_norm})
        out.append((problem, rep, elapsed))
        prev = (problem, rep)
    return out, rows, all(r.converged for _, r, _ in out)


def _increments_decrease(rows) -> bool:
    incs = [r["increment"] for r in rows[1:]]
    if any(v is None or not math.isfinite(v) for v in incs):
        return False
    scale = 1.0 + max(abs(r["norm"]) for r in rows)
    if all(v <= 1e-14 * scale for v in incs):
        return True
    return all(b < a for a, b in zip(incs, incs[1:]))


# ---------------------------------------------------------------------------
# commands


def _certificate(cfg: RunConfig, problem):
    cert = probe_coercivity(problem, problem.test_map, cfg.directions, cfg.radii, cfg.seed)
    return cert


def cmd_run(cfg: RunConfig) -> int:
    """Solve every level, certify the coarsest and report norms and increments."""
    t0 = time.perf_counter()
    levels, rows, ok = solve_levels(cfg)
    t_solve = time.perf_counter() - t0
    t1 = time.perf_counter()
    cert = _certificate(cfg, levels[0][0])
    t_cert = time.perf_counter() - t1
    norms = [r["norm"] for r in rows]
    trace = BoundednessTrace(
        levels=[(r["dim"], r["norm"]) for r in rows],
        growthFlag=growth_flag(norms),
        increments=[r["increment"] for r in rows[1:]],
        residuals=[r["residual"] for r in rows],
        span_dims=[r["dim"] for r in rows],
        failed_level=next((k for k, (_, rep, _) in enumerate(levels) if not rep.converged), None),
    )
    report = {
        "schemaVersion": SCHEMA_VERSION,
        "command": "run",
        "config": cfg.to_dict(),
        "levels": [dict(rep.summary(), level=k, refinement=ref, dim=p.trial.dim)
                   for k, ((p, rep, _), ref) in enumerate(zip(levels, cfg.levels))],
        "certificate": dict(cert.to_dict(), level=0),
        "boundedness": trace.to_dict(),
        "table": rows,
        "converged": ok,
        "timings": {"solve": t_solve, "certify": t_cert,
                    "per_level": [{"level": k, "seconds": e} for k, (_, _, e) in enumerate(levels)]},
    }
    infsup = _linear_infsup(cfg, cfg.levels[0]) if cfg.case in ("laplace", "resonant") else None
    if infsup is not None:
        report["infsup"] = dict(infsup, level=0)
    _emit(cfg, report, rows)
    return 0 if ok else 2


def cmd_certify(cfg: RunConfig) -> int:
    """Probe the coercivity of the coarsest level and report the verdict."""
    t0 = time.perf_counter()
    problem = build_problem(cfg, cfg.levels[0])
    cert = _certificate(cfg, problem)
    b = dual_norm(problem.test, problem.rhs)
    if cert.verdict == "H2":
        solv = "solvable for every right-hand side"
    elif cert.verdict == "H2prime":
        solv = ("within certified bound" if cert.solvabilityMargin > 0 else "outside certified bound")
    else:
        solv = "no certificate"
    report = {
        "schemaVersion": SCHEMA_VERSION,
        "command": "certify",
        "config": cfg.to_dict(),
        "level": 0,
        "refinement": cfg.levels[0],
        "certificate": cert.to_dict(),
        "b_dual_norm": b,
        "solvability": solv,
        "timings": {"certify": time.perf_counter() - t0},
    }
    margin = "" if cert.solvabilityMargin is None else f" margin={cert.solvabilityMargin:.6g}"
    mtxt = "" if cert.Mestimate is None else f" M={cert.Mestimate:.6g}"
    print(f"verdict {cert.verdict}{mtxt} N={cert.Nphi:.6g}{margin}: {solv}", file=sys.stderr)
    _emit(cfg, report, None)
    return 0


def _linear_infsup(cfg: RunConfig, refinement: int) -> dict | None:
    from mgalerkin.problems import pressure_infsup, rank_deficient, taylor_hood

    if cfg.case == "identity":
        n = max(cfg.dim, 1) * 4
        A = GX = GY = np.eye(n)
    elif cfg.case == "rank-deficient":
        A = rank_deficient(4, 3, cfg.seed)
        GX = GY = np.eye(4)
    elif cfg.case == "taylor-hood":
        rep = pressure_infsup(taylor_hood(refinement))
        out = rep.to_dict()
        out.update(refinement=refinement, alpha=None)
        return out
    elif cfg.case in ("laplace", "resonant"):
        problem = build_problem(cfg, refinement)
        A = dense(problem.jacobian(np.zeros(problem.trial.dim)))
        GX = GY = dense(problem.trial.gram)
    else:
        return None
    rep = infsup_constants(A, GX, GY)
    out = rep.to_dict()
    out["alpha"] = supremizer_coercivity_check(A, GX, GY)
    out["refinement"] = refinement
    return out


def cmd_infsup(cfg: RunConfig) -> int:
    """Inf-sup constants of a linear case on each level."""
    if cfg.case in NONLINEAR_CASES:
        raise UsageError(f"infsup needs a linear case, {cfg.case!r} is nonlinear")
    t0 = time.perf_counter()
    levels = cfg.levels if cfg.case not in ("identity", "rank-deficient") else cfg.levels[:1]
    results = []
    for k, ref in enumerate(levels):
        res = _linear_infsup(cfg, ref)
        res["level"] = k
        results.append(res)
        if res["warning"]:
            print(f"warning (level {k}): {res['warning']}", file=sys.stderr)
    report = {
        "schemaVersion": SCHEMA_VERSION,
        "command": "infsup",
        "config": cfg.to_dict(),
        "levels": results,
        "timings": {"infsup": time.perf_counter() - t0},
    }
    _emit(cfg, report, None)
    return 0


def cmd_converge(cfg: RunConfig) -> int:
    """Convergence table over at least three levels."""
    if len(cfg.levels) < 3:
        raise UsageError("a convergence study needs at least 3 levels")
    t0 = time.perf_counter()
    levels, rows, ok = solve_levels(cfg)
    decreasing = ok and _increments_decrease(rows)
    report = {
        "schemaVersion": SCHEMA_VERSION,
        "command": "converge",
        "config": cfg.to_dict(),
        "table": rows,
        "converged": ok,
        "increments_decrease": decreasing,
        "timings": {"converge": time.perf_counter() - t0},
    }
    if not decreasing:
        print("increments do not decrease: possible coercivity failure or under-resolution", file=sys.stderr)
    if not cfg.path and not cfg.csv:
        sys.stdout.write(table_csv(rows))
        return 0 if decreasing else 2
    _emit(cfg, report, rows)
    return 0 if decreasing else 2


COMMANDS = {"run": cmd_run, "certify": cmd_certify, "infsup": cmd_infsup, "converge": cmd_converge}

# flag -> (section, key); defaults are None so that unset flags leave the file value alone
FLAGS = {
    "--case": ("problem", "case"),
    "--levels": ("problem", "levels"),
    "--coarsest": ("problem", "coarsest"),
    "--dim": ("problem", "dim"),
    "--degree": ("problem", "degree"),
    "--p": ("problem", "p"),
    "--forcing": ("problem", "forcing"),
    "--lambda": ("problem", "lambda"),
    "--load": ("problem", "load"),
    "--nu": ("problem", "nu"),
    "--boundary": ("problem", "boundary"),
    "--lid-speed": ("problem", "lid_speed"),
    "--shift": ("problem", "shift"),
    "--tol-residual": ("solver", "tol_residual"),
    "--max-newton-its": ("solver", "max_newton_its"),
    "--homotopy-steps": ("solver", "homotopy_steps"),
    "--multistart": ("solver", "multistart"),
    "--seed": ("solver", "seed"),
    "--jacobian-mode": ("solver", "jacobian_mode"),
    "--strategy": ("solver", "strategy"),
    "--directions": ("certify", "directions"),
    "--radii": ("certify", "radii"),
    "--output": ("output", "path"),
    "--csv": ("output", "csv"),
}
ALIASES = {"--forcing": ["--f"]}


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [problem], [solver], [certify], [output] sections")
    for flag, (section, key) in FLAGS.items():
        common.add_argument(flag, *ALIASES.get(flag, []), dest=f"{section}__{key}", default=None,
                            metavar=key.upper(), help=f"[{section}] {key}")
    parser = argparse.ArgumentParser(prog="mgalerkin", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=fn.__doc__)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        cfg = build_config(args)
        return COMMANDS[args.command](cfg)
    except (UsageError, MGalerkinError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
