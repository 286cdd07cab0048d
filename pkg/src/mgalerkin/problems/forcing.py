"""Nonlinear forcing terms f(u) with sampled growth and Lipschitz checks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from mgalerkin.errors import ConfigurationError

GROWTH_CLASSES = ("bounded", "sublinear", "power", "unchecked")


@dataclass(frozen=True)
class GrowthFit:
    ok: bool
    c: float
    b: float
    exponent: float
    tail_ratio: float  # sup over the last decade / sup over the rest, of |g(x)| / (1 + |x|^exponent)


@dataclass(frozen=True, eq=False)
class ForcingSpec:
    """f together with its growth class.

    growth:
      bounded         |f(x)| <= c
      sublinear, eps  |f0(x)| <= c + b |x|^(1 - eps), f0 the part of f with the sign of x
      power, k        |f(x)| <= c + b |x|^k
    """

    f: Callable[[np.ndarray], np.ndarray]
    f_prime: Callable[[np.ndarray], np.ndarray] | None = None
    growth: str = "bounded"
    exponent: float = 0.0
    name: str = "f"

    def __post_init__(self):
        if self.growth not in GROWTH_CLASSES:
            raise ConfigurationError(f"unknown growth class {self.growth!r}")

    def __call__(self, x):
        return self.f(x)

    def derivative(self, x, h: float = 1e-7):
        if self.f_prime is not None:
            return self.f_prime(x)
        return (self.f(x + h) - self.f(x - h)) / (2 * h)

    def f0(self, x):
        """f where sgn f(x) = sgn x, zero elsewhere."""
        x = np.asarray(x, dtype=float)
        fx = self.f(x)
        return np.where(np.sign(fx) * np.sign(x) > 0, fx, 0.0)

    @property
    def bound_exponent(self) -> float:
        return {"bounded": 0.0, "sublinear": 1.0 - self.exponent, "power": self.exponent}.get(self.growth, np.nan)

    def growth_fit(self, lo: float = 1e-6, hi: float = 1e6, per_decade: int = 20, slack: float = 1.05) -> GrowthFit:
        """Sampled check of the growth bound on the log grid +-[lo, hi].

        Passes when sup |g(x)| / (1 + |x|^k) over the last decade exceeds its
        sup over the rest of the grid by at most ``slack``; g = f0 for the
        sublinear class and f otherwise.
        """
        if self.growth == "unchecked":
            return GrowthFit(True, np.nan, np.nan, np.nan, np.nan)
        k = self.bound_exponent
        n = int(np.log10(hi / lo) * per_decade) + 1
        mag = np.logspace(np.log10(lo), np.log10(hi), n)
        x = np.concatenate([-mag[::-1], [0.0], mag])
        g = np.abs(self.f0(x) if self.growth == "sublinear" else self.f(x))
        if not np.all(np.isfinite(g)):
            return GrowthFit(False, np.inf, np.inf, k, np.inf)
        weight = g / (1.0 + np.abs(x) ** k)
        tail = np.abs(x) >= hi / 10
        head_max = np.max(weight[~tail])
        tail_max = np.max(weight[tail])
        ratio = tail_max / head_max if head_max > 0 else (0.0 if tail_max == 0 else np.inf)
        small = np.abs(x) <= 1.0
        c = float(np.max(g[small]))
        big = ~small
        b = float(np.max(np.maximum(g[big] - c, 0.0) / np.abs(x[big]) ** k))
        return GrowthFit(bool(ratio <= slack), c, b, k, float(ratio))

    def lipschitz_constants(self, radii=(1.0, 10.0, 100.0), samples: int = 2001) -> dict[float, float]:
        """Largest sampled difference quotient of f on [-R, R] for each R."""
        out = {}
        for R in radii:
            x = np.linspace(-R, R, samples)
            fx = self.f(x)
            out[float(R)] = float(np.max(np.abs(np.diff(fx)) / np.diff(x)))
        return out

    def validate(self) -> GrowthFit:
        fit = self.growth_fit()
        if not fit.ok:
            raise ConfigurationError(
                f"forcing {self.name!r} violates its {self.growth} growth class "
                f"(tail ratio {fit.tail_ratio:.3g})"
            )
        lips = self.lipschitz_constants()
        if not all(np.isfinite(v) for v in lips.values()):
            raise ConfigurationError(f"forcing {self.name!r} is not locally Lipschitz on sampled compacts")
        return fit


def make_forcing(kind: str, lam: float = 1.0) -> ForcingSpec:
    """Named forcings used by the command line and the tests."""
    if kind == "zero":
        return ForcingSpec(np.zeros_like, np.zeros_like, "bounded", 0.0, "zero")
    if kind == "sin":
        return ForcingSpec(
            lambda u: lam * np.sin(u), lambda u: lam * np.cos(u), "bounded", 0.0, f"{lam:g}*sin(u)"
        )
    if kind == "cubic":
        # f(u) = -lam u^3: opposite sign to u, so f0 = 0 and -Laplace u - f(u) is monotone
        return ForcingSpec(
            lambda u: -lam * u**3, lambda u: -3.0 * lam * u**2, "sublinear", 1.0, f"-{lam:g}*u^3"
        )
    if kind == "focusing-cubic":
        return ForcingSpec(lambda u: lam * u**3, lambda u: 3.0 * lam * u**2, "power", 3.0, f"{lam:g}*u^3")
    if kind == "linear":
        return ForcingSpec(lambda u: lam * u, lambda u: lam * np.ones_like(u), "power", 1.0, f"{lam:g}*u")
    if kind == "sqrt":
        return ForcingSpec(
            lambda u: lam * np.sign(u) * np.sqrt(np.abs(u) + 1.0) - lam * np.sign(u),
            lambda u: 0.5 * lam / np.sqrt(np.abs(u) + 1.0),
            "sublinear",
            0.5,
            f"{lam:g}*sgn(u)(sqrt(|u|+1)-1)",
        )
    raise ConfigurationError(f"unknown forcing {kind!r}")
