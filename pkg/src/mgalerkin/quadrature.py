"""Gauss rules on the reference interval [0, 1] and reference triangle."""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def gauss_interval(npoints: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule on [0, 1]; exact for polynomials of degree 2n-1."""
    x, w = np.polynomial.legendre.leggauss(npoints)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def collapsed_triangle(npoints: int) -> tuple[np.ndarray, np.ndarray]:
    """Conical product rule on the triangle (0,0), (1,0), (0,1).

    The square [0,1]^2 is collapsed onto the triangle by (s, t) -> (s, (1-s) t).
    The Jacobian adds one degree in s, so the rule is exact for total degree 2n-2.
    Returns points of shape (n*n, 2) and weights of shape (n*n,).
    """
    s, ws = gauss_interval(npoints)
    t, wt = gauss_interval(npoints)
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(ws, wt) * (1.0 - S)
    pts = np.column_stack([S.ravel(), ((1.0 - S) * T).ravel()])
    return pts, W.ravel()


def rule(dim: int, exactness: int) -> tuple[np.ndarray, np.ndarray]:
    """Cheapest rule from this module exact up to total degree ``exactness``."""
    if dim == 1:
        n = max(1, (exactness + 2) // 2)
        x, w = gauss_interval(n)
        return x[:, None], w
    if dim == 2:
        n = max(1, (exactness + 3) // 2)
        return collapsed_triangle(n)
    raise ValueError(f"no quadrature for dimension {dim}")
