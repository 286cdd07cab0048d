import json

import numpy as np
import pytest
import scipy.optimize
from hypothesis import given, settings
from hypothesis import strategies as st

from mgalerkin.certify import (
    CoercivityCertificate,
    growth_flag,
    infsup_constants,
    probe_coercivity,
    sphere_surplus,
    supremizer_coercivity_check,
    track_boundedness,
    uniqueness_sample,
)
from mgalerkin.errors import ConfigurationError, InputError, UnsupportedConfigurationError
from mgalerkin.fnspace import build_space
from mgalerkin.operator import GalerkinHierarchy, TestMap
from mgalerkin.problems import (
    make_cubic_scalar,
    make_forcing,
    make_identity,
    make_laplace,
    make_resonant,
    make_saturating,
    make_semilinear,
    rank_deficient,
)


def _spd(rng, n):
    B = rng.standard_normal((n, n))
    return B @ B.T + n * np.eye(n)


# ---------------------------------------------------------------------------
# coercivity probe


def test_probe_laplace_is_superlinear():
    cert = probe_coercivity(make_laplace(build_space(1, 3)))
    assert cert.verdict == "H2" and cert.Mestimate is None
    table = cert.ratio_table()
    # a(rho d, rho d) / rho = rho a(d, d): ratios scale with the radius
    assert np.allclose(table[:, 1] / table[:, 0], 10.0)


def test_probe_semilinear_bounded_forcing():
    prob = make_semilinear(build_space(1, 4), make_forcing("sin", 5.0))
    assert probe_coercivity(prob).verdict == "H2"


def test_probe_resonant_fails():
    prob = make_resonant(build_space(1, 4), shift="discrete")
    cert = probe_coercivity(prob)
    assert cert.verdict == "fail"
    assert any(row["kind"] == "spectral" for row in cert.evidence)


def test_probe_saturating_is_H2prime():
    prob = make_saturating(build_space(1, 3), load=0.5, scale=1.0)
    cert = probe_coercivity(prob)
    assert cert.verdict == "H2prime"
    assert cert.Mestimate == pytest.approx(1.0, rel=1e-3)
    assert cert.Nphi == pytest.approx(1.0, rel=1e-9)
    assert cert.solvabilityMargin == pytest.approx(cert.Mestimate / cert.Nphi - cert.b_norm)
    assert cert.solvabilityMargin > 0


def test_probe_is_seeded():
    prob = make_semilinear(build_space(1, 3), make_forcing("sin", 5.0))
    assert probe_coercivity(prob, seed=4).to_json() == probe_coercivity(prob, seed=4).to_json()


@pytest.mark.parametrize(
    "kwargs",
    [{"directions": 4}, {"radii": (1.0, 10.0, 100.0)}, {"radii": (1.0, 2.0, 3.0, 4.0)}],
)
def test_probe_preconditions(kwargs):
    with pytest.raises(ConfigurationError):
        probe_coercivity(make_laplace(build_space(1, 2)), **kwargs)


def test_certificate_invariants():
    with pytest.raises(InputError):
        CoercivityCertificate("H2prime", 0.0, 1.0, None, [], 0)
    with pytest.raises(InputError):
        CoercivityCertificate("maybe", None, 1.0, None, [], 0)


def test_certificate_json_roundtrip():
    cert = probe_coercivity(make_resonant(build_space(1, 3), shift="discrete"))
    data = json.loads(cert.to_json())
    assert data["verdict"] == "fail"
    assert len(data["evidence"]) == cert.directions * len(cert.radii)


# ---------------------------------------------------------------------------
# sphere surplus


def test_sphere_surplus_sign():
    prob = make_laplace(build_space(1, 3), load=1.0)
    ok, worst = sphere_surplus(prob, radius=10.0)
    assert ok and worst > 0
    ok, worst = sphere_surplus(prob, radius=1e-3)
    assert not ok
    with pytest.raises(ConfigurationError):
        sphere_surplus(prob, radius=1.0, samples=8)


# ---------------------------------------------------------------------------
# boundedness


def _hierarchy(build, refs=(2, 3, 4, 5)):
    return GalerkinHierarchy.build(list(refs), lambda r: (build(build_space(1, r)), TestMap.identity()))


def test_boundedness_linear_flag_off():
    trace = track_boundedness(_hierarchy(lambda s: make_laplace(s, load=1.0)))
    assert not trace.growthFlag and trace.failed_level is None
    norms = [n for _, n in trace.levels]
    assert np.all(np.diff(norms) > 0) and norms[-1] < 1.0 / np.sqrt(12) + 1e-12
    # nested spaces: increments halve
    ratios = np.array(trace.increments[:-1]) / np.array(trace.increments[1:])
    assert np.allclose(ratios, 2.0, atol=0.1)


def test_boundedness_zero_data():
    trace = track_boundedness(_hierarchy(lambda s: make_laplace(s, load=0.0)))
    assert all(n == 0.0 for _, n in trace.levels)
    assert not trace.growthFlag


def test_boundedness_resonant_flag_on():
    # shift pi^2 sits above every discrete first eigenvalue and approaches it
    trace = track_boundedness(_hierarchy(lambda s: make_resonant(s, load=1.0, shift="continuous")))
    assert trace.growthFlag
    assert json.loads(json.dumps(trace.to_dict()))["growthFlag"] is True


@pytest.mark.parametrize(
    "norms,flag",
    [([1, 2, 3, 4], False), ([1, 2, 4, 8], True), ([1, 1.5, 1.75, 1.875], False), ([1, np.inf], True)],
)
def test_growth_flag(norms, flag):
    assert growth_flag(norms) is flag


# ---------------------------------------------------------------------------
# uniqueness


def test_uniqueness_monotone_cases():
    frac, viol = uniqueness_sample(make_laplace(build_space(1, 3)))
    assert frac == 1.0 and not viol
    frac, _ = uniqueness_sample(make_semilinear(build_space(1, 3), make_forcing("cubic", 3.0), load=1.0))
    assert frac == 1.0


def test_uniqueness_resonant_violations():
    frac, viol = uniqueness_sample(make_resonant(build_space(1, 3), shift="discrete"))
    assert frac < 1.0 and viol
    assert all(v["kind"] == "spectral" for v in viol)


def test_uniqueness_nonmonotone_scalar():
    frac, viol = uniqueness_sample(make_cubic_scalar(), scale=0.5)
    assert frac < 1.0 and len(viol) > 0


def test_uniqueness_requires_same_spaces():
    prob = make_semilinear(build_space(1, 3), make_forcing("sin"), p=1.5)
    with pytest.raises(UnsupportedConfigurationError):
        uniqueness_sample(prob)
    with pytest.raises(ConfigurationError):
        uniqueness_sample(make_identity(2), pairs=10)


# ---------------------------------------------------------------------------
# inf-sup constants


def test_infsup_identity():
    rep = infsup_constants(np.eye(4), np.eye(4), np.eye(4))
    assert rep.gammaXY == pytest.approx(1.0) and rep.gammaYX == pytest.approx(1.0)
    assert rep.discrepancy < 1e-14 and not rep.warning


def test_infsup_stiffness_energy():
    K = build_space(2, 3).stiffness
    rep = infsup_constants(K, K, K)
    assert abs(rep.gammaXY - 1.0) < 1e-10 and abs(rep.gammaYX - 1.0) < 1e-10


def _bruteforce_gamma(A, GX, GY, rng, starts=10):
    GXi = np.linalg.inv(GX)

    def f(y):
        z = A.T @ y
        return np.sqrt(z @ GXi @ z) / np.sqrt(y @ GY @ y)

    best = np.inf
    for _ in range(starts):
        res = scipy.optimize.minimize(f, rng.standard_normal(A.shape[0]), method="BFGS", options={"gtol": 1e-10})
        best = min(best, res.fun)
    return best


def test_infsup_matches_bruteforce(rng):
    A = rng.standard_normal((5, 5))
    GX, GY = _spd(rng, 5), _spd(rng, 5)
    rep = infsup_constants(A, GX, GY)
    brute = _bruteforce_gamma(A, GX, GY, rng)
    assert abs(rep.gammaXY - brute) <= 1e-3 * max(1.0, brute)
    assert rep.discrepancy < 1e-10


def test_infsup_rank_deficient():
    A = rank_deficient(4, 3)
    rep = infsup_constants(A, np.eye(4), np.eye(4))
    assert rep.gammaXY == 0.0 and rep.gammaYX == 0.0 and rep.warning


def test_infsup_rectangular(rng):
    A = rng.standard_normal((3, 5))  # X of dim 5, Y of dim 3
    rep = infsup_constants(A, np.eye(5), np.eye(3))
    assert rep.gammaYX == 0.0 and rep.gammaXY > 0 and not rep.warning
    assert rep.gammaXY == pytest.approx(min(rep.singular_values))


def test_infsup_bad_gram():
    with pytest.raises(InputError):
        infsup_constants(np.eye(2), np.array([[1.0, 2.0], [2.0, 1.0]]), np.eye(2))
    with pytest.raises(InputError):
        infsup_constants(np.eye(2), np.array([[1.0, 1.0], [0.0, 1.0]]), np.eye(2))
    with pytest.raises(InputError):
        infsup_constants(np.eye(3), np.eye(2), np.eye(2))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(2, 7))
def test_supremizer_coercivity_is_gamma_squared(seed, n):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n)) + n * np.eye(n)
    GX, GY = _spd(rng, n), _spd(rng, n)
    rep = infsup_constants(A, GX, GY)
    alpha = supremizer_coercivity_check(A, GX, GY)
    assert abs(alpha - rep.gammaYX**2) <= 1e-9 * max(1.0, alpha)
    # with Phi = supremizer, the pairing is coercive with constant alpha
    x = rng.standard_normal(n)
    pair = (A @ x) @ rep.supremizerMap(x)
    assert pair >= alpha * (x @ GX @ x) * (1 - 1e-9)


def test_infsup_report_json():
    rep = infsup_constants(np.diag([1.0, 2.0]), np.eye(2), np.eye(2))
    d = json.loads(json.dumps(rep.to_dict()))
    assert d["gammaXY"] == pytest.approx(1.0) and d["supremizer_norm"] == pytest.approx(2.0)
