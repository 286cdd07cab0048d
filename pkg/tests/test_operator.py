import numpy as np
import pytest
import scipy.linalg

from mgalerkin.errors import ConfigurationError, InputError
from mgalerkin.fnspace import build_space, duality_map
from mgalerkin.operator import (
    EuclideanSpace,
    GalerkinHierarchy,
    GramSpace,
    Level,
    OperatorProblem,
    TestedSystem,
    TestMap,
    assemble_residual,
    check_H1_discrete,
    coercivity_pairing,
    dual_norm,
    estimate_N,
    linearity_defect,
)
from mgalerkin.problems import make_forcing, make_laplace, make_semilinear, make_step


def _spd(rng, n):
    B = rng.standard_normal((n, n))
    return B @ B.T + n * np.eye(n)


def test_residual_of_linear_problem(rng):
    space = build_space(1, 3)
    prob = make_laplace(space, load=0.0)
    x = rng.standard_normal(space.dim)
    assert np.allclose(assemble_residual(prob, TestMap.identity(), x), space.stiffness @ x)


def test_residual_is_energy_gradient(rng):
    space = build_space(2, 2)
    prob = make_laplace(space, load=1.0)
    x = rng.standard_normal(space.dim)
    K, b = space.stiffness, prob.rhs
    energy = lambda v: 0.5 * v @ K @ v - b @ v  # noqa: E731
    h = 1e-6
    grad = np.array([(energy(x + h * e) - energy(x - h * e)) / (2 * h) for e in np.eye(space.dim)])
    assert np.allclose(assemble_residual(prob, TestMap.identity(), x), grad, atol=1e-8)


def test_petrov_galerkin_residual_bruteforce(rng):
    n = 5
    A = rng.standard_normal((n, n))
    P = rng.standard_normal((n, n))
    b = rng.standard_normal(n)
    X = GramSpace(_spd(rng, n))
    prob = OperatorProblem(X, X, lambda x: A @ x, b)
    phi = TestMap.linear(P)
    x = rng.standard_normal(n)
    brute = np.array([(A @ x - b) @ (P @ e) for e in np.eye(n)])
    assert np.allclose(assemble_residual(prob, phi, x), brute, atol=1e-12)
    # pairing against Phi(x) from the residual entries, by linearity
    r0 = assemble_residual(prob.with_rhs(np.zeros(n)), phi, x)
    assert np.isclose(coercivity_pairing(prob, phi, x), x @ r0, rtol=1e-9)


def test_residual_dimension_mismatch():
    prob = make_laplace(build_space(1, 2))
    with pytest.raises(InputError):
        assemble_residual(prob, TestMap.identity(), np.zeros(prob.trial.dim + 1))
    with pytest.raises(InputError):
        OperatorProblem(prob.trial, prob.test, prob.action, np.zeros(2))


def test_pairing_equals_norm_power(rng):
    space = build_space(1, 4)
    prob = make_semilinear(space, make_forcing("zero"), p=1.5, load=0.0)
    for _ in range(5):
        u = rng.standard_normal(space.dim)
        pair = coercivity_pairing(prob, prob.test_map, u)
        assert abs(pair - prob.trial.norm(u) ** 1.5) <= 1e-8 * (1 + pair)


def test_testmap_invariants():
    phi = TestMap.identity()
    x = np.arange(3.0)
    assert np.array_equal(phi(x), x)
    assert phi.n_estimate == 1.0
    with pytest.raises(ConfigurationError):
        TestMap("bogus", lambda x: x)
    with pytest.raises(ConfigurationError):
        TestMap("custom", lambda x: x, n_estimate=-1.0)
    space = build_space(1, 3)
    assert TestMap.duality_poisson(space, 2.0).kind == "identity"
    dp = TestMap.duality_poisson(space, 1.5)
    assert np.all(np.isfinite(dp(np.zeros(space.dim))))


def test_estimate_N_identity(rng):
    space = build_space(1, 3)
    assert abs(estimate_N(TestMap.identity(), space, 8, [1.0, 10.0], 0) - 1.0) < 1e-9


def test_estimate_N_linear_oracle(rng):
    n = 3
    GX, GY = _spd(rng, n), _spd(rng, n)
    P = rng.standard_normal((n, n))
    X, Y = GramSpace(GX), GramSpace(GY)
    est = estimate_N(TestMap.linear(P), X, 2000, [1.0, 10.0], 3, Y)
    LX, LY = np.linalg.cholesky(GX), np.linalg.cholesky(GY)
    W = LY.T @ P @ np.linalg.inv(LX.T)
    exact = np.linalg.svd(W, compute_uv=False)[0]
    assert exact * 0.95 <= est <= exact * (1 + 1e-12)


def test_estimate_N_duality_poisson_decreasing():
    space = build_space(1, 4, p=1.5)
    phi = TestMap.duality_poisson(space, 1.5)
    test = space.with_exponent(3.0)
    vals = [estimate_N(phi, space, 8, [r, 10 * r], 0, test) for r in (1.0, 10.0, 100.0)]
    assert np.all(np.isfinite(vals)) and vals[0] > vals[1] > vals[2]


def test_estimate_N_preconditions():
    with pytest.raises(ConfigurationError):
        estimate_N(TestMap.identity(), build_space(1, 2), 4, [1.0], 0)


def test_check_H1():
    space = build_space(1, 3)
    lin = make_laplace(space)
    semi = make_semilinear(space, make_forcing("sin", 5.0))
    x = np.linspace(-1, 1, space.dim)
    dirs = list(np.eye(space.dim)[:3])
    assert check_H1_discrete(lin, x, dirs)
    assert check_H1_discrete(semi, x, dirs)
    step = make_step(3)
    assert not check_H1_discrete(step, np.zeros(3), [np.array([1.0, 0.0, 0.0])])
    with pytest.raises(InputError):
        check_H1_discrete(lin, x, [np.zeros(space.dim)])


def test_forms_linear_in_y():
    space = build_space(2, 2)
    for prob in (make_laplace(space), make_semilinear(space, make_forcing("sin", 5.0)),
                 make_semilinear(space, make_forcing("cubic"), p=1.5)):
        assert linearity_defect(prob) < 1e-9


def test_derivative_matches_differences(rng):
    space = build_space(2, 2)
    prob = make_semilinear(space, make_forcing("sin", 5.0))
    for _ in range(10):
        x, dx, y = rng.standard_normal((3, space.dim))
        h = 1e-6
        fd = (prob.form(x + h * dx, y) - prob.form(x - h * dx, y)) / (2 * h)
        an = prob.derivative(x, dx, y)
        assert abs(fd - an) <= 1e-5 * max(1.0, abs(an))


def test_fd_jacobian_matches_analytic(rng):
    space = build_space(1, 4)
    prob = make_semilinear(space, make_forcing("sin", 5.0))
    system = TestedSystem(prob, prob.test_map, space.orthonormal_frame())
    x = rng.standard_normal(space.dim)
    Ja, Jf = system.jacobian(x), system.fd_jacobian(x)
    assert np.linalg.norm(Ja - Jf) <= 1e-5 * np.linalg.norm(Ja)


def test_dual_norm_hilbert(rng):
    space = build_space(2, 3)
    g = rng.standard_normal(space.dim)
    z = scipy.linalg.solve(space.stiffness.toarray(), g)
    assert np.isclose(dual_norm(space, g), np.sqrt(g @ z), rtol=1e-12)
    G = _spd(rng, 4)
    g = rng.standard_normal(4)
    assert np.isclose(dual_norm(GramSpace(G), g), np.sqrt(g @ np.linalg.solve(G, g)))
    assert dual_norm(EuclideanSpace(4), g) == pytest.approx(np.linalg.norm(g))


def test_dual_norm_w1q_is_attained(rng):
    space = build_space(1, 4)
    q = 3.0
    test = space.with_exponent(q)
    u = rng.standard_normal(space.dim)
    # g = J_q(u) attains its dual norm at y = u: ||g|| = ||u||^(q - 1)
    g = duality_map(space, u, q)
    assert np.isclose(dual_norm(test, g), space.norm(u, q) ** (q - 1), rtol=1e-8)
    # lower bound of every ratio
    for y in rng.standard_normal((5, space.dim)):
        assert dual_norm(test, g) >= (g @ y) / space.norm(y, q) - 1e-12


def test_hierarchy_requires_growth():
    lv = [Level(i, make_laplace(build_space(1, r)), TestMap.identity()) for i, r in enumerate((3, 2))]
    with pytest.raises(ConfigurationError):
        GalerkinHierarchy(lv)
    h = GalerkinHierarchy.build([2, 3], lambda r: (make_laplace(build_space(1, r)), TestMap.identity()))
    assert len(h) == 2 and [lv.dim for lv in h] == [3, 7]
