import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mgalerkin.errors import ConfigurationError, DomainError, InputError
from mgalerkin.fnspace import (
    FluxSpace,
    SobolevExponents,
    build_space,
    duality_jacobian,
    duality_map,
    evaluate,
    interpolate,
    norm_w1p,
    poisson_solve,
    prolong,
    unit_mesh,
)


def test_smallest_1d_space():
    space = build_space(1, 1)
    assert space.dim == 1
    assert np.allclose(space.stiffness.toarray(), [[4.0]])


@pytest.mark.parametrize("k", [2, 3, 5])
def test_1d_stiffness_is_tridiagonal(k):
    space = build_space(1, k)
    n = 2**k
    K = space.stiffness.toarray()
    expected = n * (2 * np.eye(n - 1) - np.eye(n - 1, k=1) - np.eye(n - 1, k=-1))
    assert np.allclose(K, expected, atol=1e-12)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_2d_interior_count(k):
    n = 2**k
    assert build_space(2, k).dim == (n - 1) ** 2
    assert build_space(2, k, degree=2).dim == (2 * n - 1) ** 2


def test_mesh_covers_square():
    mesh = unit_mesh(2, 4)
    v = mesh.vertices[mesh.cells]
    e1, e2 = v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]
    area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    assert math.isclose(area.sum(), 1.0)
    on_edge = (mesh.vertices == 0).any(axis=1) | (mesh.vertices == 1).any(axis=1)
    assert np.array_equal(mesh.boundary, on_edge)
    data = json.loads(mesh.to_json())
    assert len(data["cells"]) == 32


def test_bad_construction():
    with pytest.raises(ConfigurationError):
        build_space(3, 2)
    with pytest.raises(ConfigurationError):
        build_space(1, 2, degree=3)
    with pytest.raises(ConfigurationError):
        build_space(1, 0)
    with pytest.raises(DomainError):
        build_space(1, 2, p=1.0)


@pytest.mark.parametrize("dim,degree", [(1, 1), (1, 2), (2, 1), (2, 2)])
def test_grams_spd(dim, degree):
    space = build_space(dim, 2, degree)
    for G in (space.stiffness.toarray(), space.mass.toarray()):
        assert np.allclose(G, G.T, atol=1e-14)
        assert np.linalg.eigvalsh(G).min() > 0


@pytest.mark.parametrize("p", [1.2, 1.5, 2.0, 3.0])
def test_hat_function_norm(p):
    space = build_space(1, 1, p=p)
    assert math.isclose(space.norm(np.ones(1)), 2.0, rel_tol=1e-13)
    assert norm_w1p(space, np.zeros(1), p) == 0.0


def test_norm_rejects_p_le_1():
    space = build_space(1, 2)
    with pytest.raises(DomainError):
        norm_w1p(space, np.ones(space.dim), 1.0)


@pytest.mark.parametrize("dim,degree", [(1, 1), (2, 1), (2, 2)])
def test_p2_degeneracy(backend, rng, dim, degree):
    space = build_space(dim, 3, degree)
    u = rng.standard_normal(space.dim)
    K = space.stiffness
    assert math.isclose(norm_w1p(space, u, 2.0), math.sqrt(u @ K @ u), rel_tol=1e-12)
    j = duality_map(space, u, 2.0)
    assert np.allclose(j, K @ u, atol=1e-12 * np.abs(K @ u).max())
    assert np.allclose(poisson_solve(space, j), u, atol=1e-10)


def test_duality_of_zero(backend):
    space = build_space(2, 2)
    assert not np.any(duality_map(space, np.zeros(space.dim), 1.5))
    assert not np.any(poisson_solve(space, np.zeros(space.dim)))


@settings(max_examples=40, deadline=None)
@given(
    u=arrays(np.float64, 15, elements=st.floats(-1e3, 1e3, allow_nan=False)),
    p=st.sampled_from([1.2, 1.5, 2.0, 2.5]),
)
def test_duality_identity_1d(u, p):
    space = build_space(1, 4, p=p)
    n = space.norm(u)
    assert abs(duality_map(space, u, p) @ u - n**p) <= 1e-10 * (1 + n**p)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), p=st.sampled_from([1.5, 2.0]), scale=st.floats(1e-3, 1e3))
def test_duality_identity_2d(seed, p, scale):
    space = build_space(2, 3, degree=2, p=p)
    u = scale * np.random.default_rng(seed).standard_normal(space.dim)
    n = space.norm(u)
    assert abs(duality_map(space, u, p) @ u - n**p) <= 1e-10 * (1 + n**p)


def test_duality_jacobian_matches_differences(rng):
    space = build_space(1, 4)
    u = rng.standard_normal(space.dim)
    du = rng.standard_normal(space.dim)
    for p in (1.5, 2.0, 3.0):
        h = 1e-6
        fd = (duality_map(space, u + h * du, p) - duality_map(space, u - h * du, p)) / (2 * h)
        assert np.allclose(duality_jacobian(space, u, p) @ du, fd, rtol=1e-5, atol=1e-7)


def test_poisson_residual(rng):
    space = build_space(2, 4)
    rhs = rng.standard_normal(space.dim)
    z = poisson_solve(space, rhs)
    assert np.linalg.norm(space.stiffness @ z - rhs) / np.linalg.norm(rhs) < 1e-10


def test_interpolate_basics():
    space = build_space(2, 2, degree=2)
    assert not np.any(interpolate(space, lambda x: np.zeros(len(x))))
    k = 5
    xk = space.interior_coords()[k]
    e = interpolate(space, lambda x: np.all(np.isclose(x, xk), axis=1).astype(float))
    assert np.array_equal(e, np.eye(space.dim)[k])
    with pytest.raises(InputError):
        interpolate(space, lambda x: np.full(len(x), np.nan))


def test_interpolation_rate():
    errs = []
    for k in range(3, 7):
        space = build_space(1, k)
        u = interpolate(space, lambda x: np.sin(np.pi * x[:, 0]))
        diff = space.values(u) - np.sin(np.pi * space.xq[..., 0])
        errs.append(math.sqrt(np.sum(space.wq * diff**2)))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(rates - 2.0) < 0.05)


@pytest.mark.parametrize("dim,degree", [(1, 1), (1, 2), (2, 1), (2, 2)])
def test_nested_prolongation(rng, dim, degree):
    coarse = build_space(dim, 2, degree)
    fine = build_space(dim, 3, degree)
    u = rng.standard_normal(coarse.dim)
    uf = prolong(coarse, u, fine)
    # same function: values at fine quadrature points agree
    assert np.allclose(evaluate(coarse, u, fine.xq.reshape(-1, dim)), fine.values(uf).ravel(), atol=1e-12)
    assert math.isclose(coarse.norm(u), fine.norm(uf), rel_tol=1e-12)


def test_integrate_polynomials():
    space = build_space(2, 2, degree=2)
    x, y = space.xq[..., 0], space.xq[..., 1]
    # int x^3 y^3 over the unit square = 1/16
    assert math.isclose(np.sum(space.wq * x**3 * y**3), 1.0 / 16.0, rel_tol=1e-12)


def test_flux_gradient_compatible():
    space = build_space(2, 3)
    flux = FluxSpace(space.mesh)
    D = flux.gradient_matrix(space)
    assert np.allclose((D.T @ flux.mass @ D).toarray(), space.stiffness.toarray(), atol=1e-12)
    with pytest.raises(ConfigurationError):
        flux.gradient_matrix(build_space(2, 3, degree=2))


@pytest.mark.parametrize("p,d", [(1.5, 1), (1.5, 2), (2.0, 2), (1.2, 2), (3.0, 2)])
def test_sobolev_exponents(p, d):
    e = SobolevExponents.from_p(p, d)
    assert abs(1 / e.p + 1 / e.q - 1) < 1e-12
    for s, s_star in ((e.p, e.p_star), (e.q, e.q_star)):
        if s < d:
            assert abs(1 / s_star - (1 / s - 1 / d)) < 1e-12
        elif s > d:
            assert math.isinf(s_star)
    if math.isinf(e.q_star):
        assert e.r == 1.0
    else:
        assert abs(1 / e.r + 1 / e.q_star - 1) < 1e-12


def test_sobolev_critical_case():
    e = SobolevExponents.from_p(2.0, 2, critical=7.0)
    assert e.p_star == 7.0 and e.q_star == 7.0
    with pytest.raises(DomainError):
        SobolevExponents.from_p(1.0, 2)
