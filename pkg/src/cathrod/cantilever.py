"""Large-deflection cantilever under a transverse tip load.

The tip slope ``phi0`` solves

    int_0^phi0 dphi / sqrt(sin phi0 - sin phi) = 2 sqrt(alpha),  alpha = F L^2 / (2 E I)

and the deflected shape follows by quadrature in the slope angle. The
inverse square-root endpoint singularity is removed with the change of
variable ``sin phi = sin phi0 * sin(theta)**2``, after which the integrands
are smooth on ``theta in [0, pi/2]`` and Gauss-Legendre quadrature converges
fast.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

GRID_SIZE = 20001
_GAUSS_ORDER = 96


class OracleRangeError(ValueError):
    pass


@dataclass(frozen=True)
class CantileverProblem:
    load: float
    length: float
    youngs: float
    area_moment: float

    def __post_init__(self):
        for name in ("load", "length", "youngs", "area_moment"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive, got {value}")

    @classmethod
    def circular(cls, load: float, length: float, youngs: float, radius: float):
        return cls(load, length, youngs, np.pi * radius ** 4 / 4.0)

    @property
    def alpha(self) -> float:
        return self.load * self.length ** 2 / (2.0 * self.youngs * self.area_moment)


@dataclass(frozen=True)
class DeflectionCurve:
    phi: np.ndarray
    x: np.ndarray
    y: np.ndarray
    phi0: float

    @property
    def tip(self) -> np.ndarray:
        return np.array([self.x[-1], self.y[-1]])

    def arc_length(self) -> float:
        return float(np.sum(np.hypot(np.diff(self.x), np.diff(self.y))))


@lru_cache(maxsize=1)
def _gauss(n: int = _GAUSS_ORDER):
    nodes, weights = np.polynomial.legendre.leggauss(n)
    return nodes, weights


def _panels(upper: np.ndarray, n_panels: int):
    """Gauss nodes/weights mapping [0, upper] into graded panels (shape (..., P*n))."""
    nodes, weights = _gauss()
    # panels cluster toward theta = pi/2, where the integrand steepens as phi0 -> pi/2
    edges = 1.0 - (1.0 - np.linspace(0.0, 1.0, n_panels + 1)) ** 2
    a, b = edges[:-1], edges[1:]
    t = (0.5 * (b - a))[:, None] * nodes[None, :] + (0.5 * (a + b))[:, None]
    w = (0.5 * (b - a))[:, None] * weights[None, :]
    t, w = t.ravel(), w.ravel()
    upper = np.asarray(upper, dtype=float)[..., None]
    return upper * t, upper * w


def slope_integral(phi0, n_panels: int = 4) -> np.ndarray:
    """``int_0^phi0 dphi / sqrt(sin phi0 - sin phi)`` (vectorized over ``phi0``)."""
    phi0 = np.asarray(phi0, dtype=float)
    s0 = np.sin(phi0)[..., None]
    theta, w = _panels(np.full(phi0.shape, 0.5 * np.pi), n_panels)
    st = np.sin(theta)
    integrand = 2.0 * np.sqrt(s0) * st / np.sqrt(1.0 - (s0 * st * st) ** 2)
    return np.sum(integrand * w, axis=-1)


def _sine_integral(phi0: float, phi: np.ndarray, n_panels: int = 4) -> np.ndarray:
    """``int_0^phi sin(p) dp / sqrt(sin phi0 - sin p)`` for each ``phi`` in ``[0, phi0]``."""
    s0 = np.sin(phi0)
    ratio = np.clip(np.sin(phi) / s0, 0.0, 1.0)
    upper = np.arcsin(np.sqrt(ratio))
    theta, w = _panels(upper, n_panels)
    st = np.sin(theta)
    integrand = 2.0 * s0 ** 1.5 * st ** 3 / np.sqrt(1.0 - (s0 * st * st) ** 2)
    return np.sum(integrand * w, axis=-1)


@lru_cache(maxsize=4)
def alpha_table(grid_size: int = GRID_SIZE) -> tuple[np.ndarray, np.ndarray]:
    """Tabulated ``(phi0, alpha)`` on a uniform interior grid of ``(0, pi/2)``."""
    phi0 = np.linspace(0.0, 0.5 * np.pi, grid_size + 2)[1:-1]
    alpha = 0.25 * slope_integral(phi0) ** 2
    phi0.flags.writeable = False
    alpha.flags.writeable = False
    return phi0, alpha


def phi0_residual(phi0: float, alpha: float) -> float:
    return float(slope_integral(phi0) - 2.0 * np.sqrt(alpha))


def phi0_from_alpha(alpha: float, grid_size: int = GRID_SIZE, polish: bool = True) -> float:
    """Tip slope for load parameter ``alpha`` by table lookup.

    Linear inverse interpolation in the table, optionally refined by a
    bracketed root solve between the neighbouring grid values.
    """
    if not (np.isfinite(alpha) and alpha > 0):
        raise OracleRangeError(f"alpha must be positive, got {alpha}")
    phi_grid, alpha_grid = alpha_table(grid_size)
    lo, hi = float(alpha_grid[0]), float(alpha_grid[-1])
    if not lo <= alpha <= hi:
        raise OracleRangeError(
            f"alpha={alpha:.6g} outside tabulated range [{lo:.6g}, {hi:.6g}]")
    k = int(np.searchsorted(alpha_grid, alpha))
    k = min(max(k, 1), len(alpha_grid) - 1)
    a0, a1 = alpha_grid[k - 1], alpha_grid[k]
    p0, p1 = phi_grid[k - 1], phi_grid[k]
    phi0 = float(p0 + (alpha - a0) * (p1 - p0) / (a1 - a0))
    if polish:
        f0, f1 = phi0_residual(p0, alpha), phi0_residual(p1, alpha)
        if f0 == 0.0:
            return float(p0)
        if f1 == 0.0:
            return float(p1)
        if f0 * f1 < 0.0:
            phi0 = brentq(phi0_residual, p0, p1, args=(alpha,), xtol=1e-15, rtol=1e-15)
    return float(phi0)


def deflection_curve(problem: CantileverProblem, phi0: float | None = None,
                     samples: int = 201) -> DeflectionCurve:
    """Deflected centerline sampled uniformly in slope angle from clamp to tip.

    ``x`` runs along the undeformed axis and ``y`` along the load.
    """
    if phi0 is None:
        phi0 = phi0_from_alpha(problem.alpha)
    if samples < 2:
        raise ValueError("samples must be >= 2")
    EI, F = problem.youngs * problem.area_moment, problem.load
    phi = np.linspace(0.0, phi0, samples)
    s0 = np.sin(phi0)
    x = np.sqrt(2.0 * EI / F) * (np.sqrt(s0) - np.sqrt(np.clip(s0 - np.sin(phi), 0.0, None)))
    y = np.sqrt(EI / (2.0 * F)) * _sine_integral(phi0, phi)
    return DeflectionCurve(phi, x, y, float(phi0))


def arc_length_along(problem: CantileverProblem, phi0: float, samples: int) -> np.ndarray:
    """Arc length from the clamp at each slope sample of ``deflection_curve``."""
    EI, F = problem.youngs * problem.area_moment, problem.load
    phi = np.linspace(0.0, phi0, samples)
    s0 = np.sin(phi0)
    ratio = np.clip(np.sin(phi) / s0, 0.0, 1.0)
    theta, w = _panels(np.arcsin(np.sqrt(ratio)), 4)
    st = np.sin(theta)
    integrand = 2.0 * np.sqrt(s0) * st / np.sqrt(1.0 - (s0 * st * st) ** 2)
    return np.sqrt(EI / (2.0 * F)) * np.sum(integrand * w, axis=-1)


def solve(problem: CantileverProblem, samples: int = 201) -> DeflectionCurve:
    return deflection_curve(problem, phi0_from_alpha(problem.alpha), samples)


def resample_by_arclength(problem: CantileverProblem, curve: DeflectionCurve,
                          n_points: int) -> np.ndarray:
    """Curve points at ``n_points`` equally spaced arc-length stations (for plotting/area)."""
    fine = deflection_curve(problem, curve.phi0, 4001)
    s = arc_length_along(problem, curve.phi0, 4001)
    target = np.linspace(0.0, s[-1], n_points)
    return np.column_stack([np.interp(target, s, fine.x), np.interp(target, s, fine.y)])
