import math

import numpy as np
import pytest

from mgalerkin.quadrature import collapsed_triangle, gauss_interval, rule


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_gauss_interval_exact(n):
    x, w = gauss_interval(n)
    for k in range(2 * n):
        assert np.isclose(w @ x**k, 1.0 / (k + 1), rtol=0, atol=1e-14)


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_collapsed_triangle_monomials(n):
    pts, w = collapsed_triangle(n)
    # int_T s^a t^b = a! b! / (a + b + 2)!
    for a in range(2 * n - 1):
        for b in range(2 * n - 1 - a):
            exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
            assert abs(w @ (pts[:, 0] ** a * pts[:, 1] ** b) - exact) < 1e-14


def test_rule_exactness_degree():
    for dim in (1, 2):
        for deg in (2, 4, 6):
            pts, w = rule(dim, deg)
            assert np.all(w > 0)
            assert np.isclose(w.sum(), 1.0 if dim == 1 else 0.5)
