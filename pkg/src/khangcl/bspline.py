"""Uniform B-spline bases on a fixed grid.

A grid with ``g`` intervals on ``[a, b]`` and degree ``k`` carries
``g + 2k + 1`` equally spaced knots, ``k`` cells beyond each end, so exactly
``g + k`` basis functions are supported on the domain. Inputs outside
``[a, b]`` are clamped to the nearest endpoint.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Tuple

import numpy as np

from .errors import ConfigError, ShapeError

SIMPSON_PANELS = 128


@dataclass(frozen=True)
class SplineGrid:
    a: float = -1.0
    b: float = 1.0
    g: int = 5
    k: int = 3

    def __post_init__(self):
        if not self.a < self.b:
            raise ConfigError(f"grid domain must satisfy a < b, got [{self.a}, {self.b}]")
        if self.g < 1:
            raise ConfigError(f"grid needs at least one interval, got g={self.g}")
        if self.k < 1:
            raise ConfigError(f"degree must be >= 1, got k={self.k}")

    @property
    def h(self) -> float:
        return (self.b - self.a) / self.g

    @property
    def n_basis(self) -> int:
        return self.g + self.k

    @cached_property
    def knots(self) -> np.ndarray:
        return self.a + self.h * np.arange(-self.k, self.g + self.k + 1, dtype=np.float64)


def _cox_de_boor(knots: np.ndarray, degree: int, x: np.ndarray):
    """All B-splines of ``degree`` on ``knots`` at points ``x``, plus the
    degree ``degree-1`` family (needed for derivatives).

    Returns arrays of shape ``x.shape + (len(knots) - degree - 1,)`` and
    ``x.shape + (len(knots) - degree,)``.
    """
    x = x[..., None]
    B = ((knots[:-1] <= x) & (x < knots[1:])).astype(np.float64)
    prev = B
    for p in range(1, degree + 1):
        left = knots[: -p - 1]
        right = knots[p + 1 :]
        w_left = (x - left) / (knots[p:-1] - left)
        w_right = (right - x) / (right - knots[1:-p])
        prev = B
        B = w_left * B[..., :-1] + w_right * B[..., 1:]
    return B, prev


def _clamp(grid: SplineGrid, x) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    xc = np.clip(x, grid.a, grid.b)
    return xc, (x >= grid.a) & (x <= grid.b)


def basis_eval(grid: SplineGrid, x) -> np.ndarray:
    """Values ``(B_1(x), ..., B_{d_c}(x))`` along a trailing axis."""
    xc, _ = _clamp(grid, x)
    B, _ = _cox_de_boor(grid.knots, grid.k, xc)
    return B


def basis_eval_deriv(grid: SplineGrid, x) -> Tuple[np.ndarray, np.ndarray]:
    """Basis values and first derivatives in one recurrence pass.

    Derivatives are zero for inputs strictly outside the domain.
    """
    xc, inside = _clamp(grid, x)
    B, lower = _cox_de_boor(grid.knots, grid.k, xc)
    # uniform knots: B'_m = k/(k h) * (N_m - N_{m+1}) with N the degree k-1 family
    dB = (lower[..., :-1] - lower[..., 1:]) / grid.h
    dB = np.where(inside[..., None], dB, 0.0)
    return B, dB


def basis_deriv(grid: SplineGrid, x) -> np.ndarray:
    return basis_eval_deriv(grid, x)[1]


def spline_eval(grid: SplineGrid, c, x):
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (grid.n_basis,):
        raise ShapeError(f"expected {grid.n_basis} coefficients, got shape {c.shape}")
    return basis_eval(grid, x) @ c


def _simpson_nodes(lo: float, hi: float, cells: int, panels: int):
    """Nodes and weights of composite Simpson with ``panels`` per cell."""
    n = 2 * panels * cells
    xs = np.linspace(lo, hi, n + 1)
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    w *= (hi - lo) / n / 3.0
    return xs, w


def basis_l2_products(grid: SplineGrid, panels: int = SIMPSON_PANELS) -> np.ndarray:
    """Overlap integrals ``M(d) = ∫ B_i B_{i+d}`` for ``d = 0..k``.

    All bases of a uniform grid are translates of one another, so the pair is
    taken from a local unclamped knot vector with the grid's spacing.
    """
    k = grid.k
    h = grid.h
    knots = h * np.arange(2 * k + 2, dtype=np.float64)
    xs, w = _simpson_nodes(0.0, (k + 1) * h, k + 1, panels)
    B, _ = _cox_de_boor(knots, k, xs)
    return np.array([w @ (B[:, 0] * B[:, d]) for d in range(k + 1)])


def basis_gram(grid: SplineGrid, panels: int = SIMPSON_PANELS) -> np.ndarray:
    """Full ``d_c x d_c`` matrix of ``∫_a^b B_i B_j`` over the clamped domain."""
    xs, w = _simpson_nodes(grid.a, grid.b, grid.g, panels)
    B = basis_eval(grid, xs)
    return (B * w[:, None]).T @ B


def spline_variance(grid: SplineGrid, c, panels: int = SIMPSON_PANELS) -> float:
    """``∫_a^b (φ(x) - μ_φ)^2 dx`` with ``μ_φ`` the mean of ``φ`` over the domain."""
    xs, w = _simpson_nodes(grid.a, grid.b, grid.g, panels)
    phi = spline_eval(grid, c, xs)
    mu = (w @ phi) / (grid.b - grid.a)
    return float(w @ (phi - mu) ** 2)


def coeff_variance(c) -> float:
    c = np.asarray(c, dtype=np.float64)
    if c.size == 0:
        raise ShapeError("need at least one coefficient")
    return float(np.var(c))
