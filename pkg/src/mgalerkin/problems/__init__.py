"""Concrete problem families and their registration under command-line case names.

Every registered builder has the signature ``builder(refinement, params)``
where ``params`` is a mapping with (at least) the keys of
:data:`DEFAULT_PARAMS`.
"""

from __future__ import annotations

from mgalerkin.fnspace import FluxSpace, build_space
from mgalerkin.operator import PROBLEM_REGISTRY, GramSpace, OperatorProblem, TestMap, register_problem
from mgalerkin.problems.forcing import ForcingSpec, GrowthFit, make_forcing
from mgalerkin.problems.mixed import make_mixed_poisson, split_mixed
from mgalerkin.problems.navier_stokes import (
    TaylorHood,
    cavity_family,
    energy_identity,
    make_navier_stokes,
    measure_extension_epsilon,
    pressure_infsup,
    recover_pressure,
    taylor_hood,
)
from mgalerkin.problems.semilinear import (
    discrete_first_eigenpair,
    forcing_functional,
    load_functional,
    make_laplace,
    make_resonant,
    make_saturating,
    make_semilinear,
)
from mgalerkin.problems.synthetic import make_cubic_scalar, make_identity, make_linear, make_step, rank_deficient

DEFAULT_PARAMS = {
    "dim": 1,
    "degree": 1,
    "p": 2.0,
    "forcing": "sin",
    "lam": 5.0,
    "load": 1.0,
    "nu": 0.01,
    "boundary": "lid",
    "lid_speed": 1.0,
    "shift": "continuous",
}


def _params(params) -> dict:
    out = dict(DEFAULT_PARAMS)
    out.update(params or {})
    return out


@register_problem("semilinear")
def _semilinear(refinement: int, params=None) -> OperatorProblem:
    prm = _params(params)
    space = build_space(prm["dim"], refinement, prm["degree"])
    return make_semilinear(space, make_forcing(prm["forcing"], prm["lam"]), 2.0, prm["load"])


@register_problem("semilinear-p")
def _semilinear_p(refinement: int, params=None) -> OperatorProblem:
    prm = _params(params)
    space = build_space(prm["dim"], refinement, prm["degree"])
    return make_semilinear(space, make_forcing(prm["forcing"], prm["lam"]), prm["p"], prm["load"],
                           name="semilinear-p")


@register_problem("mixed-poisson")
def _mixed(refinement: int, params=None) -> OperatorProblem:
    prm = _params(params)
    space = build_space(prm["dim"], refinement, 1)
    return make_mixed_poisson(FluxSpace(space.mesh), space, make_forcing(prm["forcing"], prm["lam"]), prm["load"])


@register_problem("ns-cavity")
def _cavity(refinement: int, params=None) -> OperatorProblem:
    prm = _params(params)
    return make_navier_stokes(refinement, prm["nu"], boundary=prm["boundary"], lid_speed=prm["lid_speed"])


@register_problem("laplace")
def _laplace(refinement: int, params=None) -> OperatorProblem:
    prm = _params(params)
    return make_laplace(build_space(prm["dim"], refinement, prm["degree"]), prm["load"])


@register_problem("resonant")
def _resonant(refinement: int, params=None) -> OperatorProblem:
    prm = _params(params)
    return make_resonant(build_space(prm["dim"], refinement, prm["degree"]), prm["load"], prm["shift"])


@register_problem("saturating")
def _saturating(refinement: int, params=None) -> OperatorProblem:
    prm = _params(params)
    return make_saturating(build_space(prm["dim"], refinement, prm["degree"]), prm["load"])


__all__ = [
    "DEFAULT_PARAMS",
    "ForcingSpec",
    "GramSpace",
    "GrowthFit",
    "PROBLEM_REGISTRY",
    "TaylorHood",
    "TestMap",
    "cavity_family",
    "discrete_first_eigenpair",
    "energy_identity",
    "forcing_functional",
    "load_functional",
    "make_cubic_scalar",
    "make_forcing",
    "make_identity",
    "make_laplace",
    "make_linear",
    "make_mixed_poisson",
    "make_navier_stokes",
    "make_resonant",
    "make_saturating",
    "make_semilinear",
    "make_step",
    "measure_extension_epsilon",
    "pressure_infsup",
    "rank_deficient",
    "recover_pressure",
    "split_mixed",
    "taylor_hood",
]
