"""Closed-form heat semigroup on (0, 1) in the orthonormal sine basis.

With phi_k(x) = sqrt(2) sin(k pi x) the solution operator is diagonal,
S phi_k = exp(-k^2 pi^2 T) phi_k, so forward evolution and Tikhonov inversion
reduce to per-mode multipliers. Used to check the finite element pipeline.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

DEFAULT_MODES = 50
UNDERFLOW = 1e-300
QUAD_PANELS = 200

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(5)


def composite_gauss(panels: int = QUAD_PANELS):
    """Nodes and weights of 5-point Gauss-Legendre on ``panels`` uniform panels of [0, 1]."""
    h = 1.0 / panels
    left = np.arange(panels) * h
    x = (left[:, None] + 0.5 * h * (_GL_NODES + 1.0)[None, :]).ravel()
    w = np.tile(0.5 * h * _GL_WEIGHTS, panels)
    return x, w


def decay_factors(K: int, t: float) -> np.ndarray:
    k = np.arange(1, K + 1)
    with np.errstate(under="ignore"):
        s = np.exp(-(k * math.pi) ** 2 * t)
    s[s < UNDERFLOW] = 0.0
    return s


@dataclass(frozen=True)
class SineSeries:
    """Coefficients against sqrt(2) sin(k pi x), k = 1..len(coefficients)."""

    coefficients: np.ndarray

    @property
    def K(self) -> int:
        return len(self.coefficients)

    def __call__(self, x):
        return evaluate_series(self, x)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coefficients))


@dataclass(frozen=True)
class SpectralModel:
    K: int
    T: float
    sigma: np.ndarray
    panels: int = QUAD_PANELS

    @classmethod
    def build(cls, T: float = 1.0, K: int = DEFAULT_MODES) -> "SpectralModel":
        if not T > 0 or K < 1:
            raise InvalidArgumentError("need T > 0 and K >= 1")
        return cls(K, float(T), decay_factors(K, T))

    def forward(self, series: SineSeries) -> SineSeries:
        return heat_evolve(series, self.T)

    def tikhonov(self, observed: SineSeries, rho: float) -> SineSeries:
        return tikhonov_solution(observed, rho, self.T)


def sine_coefficients(f, K: int = DEFAULT_MODES, panels: int = QUAD_PANELS) -> SineSeries:
    x, w = composite_gauss(panels)
    fx = np.asarray(f(x), dtype=float) * w
    k = np.arange(1, K + 1)
    basis = math.sqrt(2.0) * np.sin(np.pi * k[:, None] * x[None, :])
    return SineSeries(basis @ fx)


def heat_evolve(series: SineSeries, t: float) -> SineSeries:
    if t < 0:
        raise InvalidArgumentError("t must be nonnegative")
    return SineSeries(decay_factors(series.K, t) * series.coefficients)


def filter_factors(sigma: np.ndarray, rho: float) -> np.ndarray:
    """sigma / (sigma^2 + rho); exactly zero where sigma underflowed."""
    return np.where(sigma > 0.0, sigma / (sigma * sigma + rho), 0.0)


def tikhonov_solution(observed: SineSeries, rho: float, T: float = 1.0) -> SineSeries:
    """(S*S + rho I)^{-1} S* applied to the observed terminal data."""
    if not rho > 0:
        raise InvalidArgumentError("rho must be positive")
    sigma = decay_factors(observed.K, T)
    return SineSeries(filter_factors(sigma, rho) * observed.coefficients)


def evaluate_series(series: SineSeries, points) -> np.ndarray:
    x = np.asarray(points, dtype=float)
    k = np.arange(1, series.K + 1)
    vals = math.sqrt(2.0) * np.sin(np.pi * np.multiply.outer(x, k)) @ series.coefficients
    return vals


def _as_callable(a):
    if isinstance(a, SineSeries):
        return a.__call__
    if callable(a):
        return a
    value = float(a)
    return lambda x: np.full_like(np.asarray(x, dtype=float), value)


def l2_norm(a, panels: int = QUAD_PANELS) -> float:
    if isinstance(a, SineSeries):
        return a.norm()
    x, w = composite_gauss(panels)
    return math.sqrt(float(w @ np.asarray(_as_callable(a)(x), dtype=float) ** 2))


def l2_error(a, b, panels: int = QUAD_PANELS) -> float:
    """L2(0, 1) distance; Parseval for two series, composite Gauss otherwise."""
    if isinstance(a, SineSeries) and isinstance(b, SineSeries):
        K = max(a.K, b.K)
        ca = np.pad(a.coefficients, (0, K - a.K))
        cb = np.pad(b.coefficients, (0, K - b.K))
        return float(np.linalg.norm(ca - cb))
    fa, fb = _as_callable(a), _as_callable(b)
    x, w = composite_gauss(panels)
    diff = np.asarray(fa(x), dtype=float) - np.asarray(fb(x), dtype=float)
    return math.sqrt(float(w @ diff**2))
