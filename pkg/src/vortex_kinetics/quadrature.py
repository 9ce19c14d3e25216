"""Radial quadrature and relative-angle Fourier tools shared by the plane modules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RadialGrid:
    """Composite Gauss-Legendre rule on ``[a, b]`` (``n_panels`` panels of ``order`` nodes)."""

    nodes: np.ndarray
    weights: np.ndarray
    breaks: np.ndarray
    order: int

    @property
    def size(self) -> int:
        return self.nodes.size

    @property
    def r_max(self) -> float:
        return float(self.breaks[-1])

    def refined(self) -> "RadialGrid":
        """Same interval with twice as many panels."""
        return composite_gauss_legendre(self.breaks[0], self.breaks[-1], 2 * (self.breaks.size - 1), self.order)


def composite_gauss_legendre(a: float, b: float, n_panels: int, order: int = 16, breaks=None) -> RadialGrid:
    """Composite Gauss-Legendre nodes and weights on ``[a, b]``."""
    if breaks is None:
        breaks = np.linspace(a, b, n_panels + 1)
    breaks = np.asarray(breaks, dtype=float)
    t, wt = np.polynomial.legendre.leggauss(order)
    lo, hi = breaks[:-1, None], breaks[1:, None]
    half = 0.5 * (hi - lo)
    nodes = (lo + hi) / 2 + half * t[None, :]
    weights = half * wt[None, :]
    return RadialGrid(nodes.ravel(), weights.ravel(), breaks, order)


def angular_cosine_modes(values: np.ndarray, n_max: int) -> np.ndarray:
    """Cosine coefficients of a function even in the relative angle.

    ``values[..., l]`` samples ``f(psi_l)`` at ``psi_l = 2 pi l / P``.  Returns
    ``c[..., n] = (1/2pi) int f(psi) cos(n psi) dpsi`` for ``n = 0..n_max``, so
    that ``f = c_0 + 2 sum_{n>=1} c_n cos(n psi)``.
    """
    spec = np.fft.rfft(values, axis=-1) / values.shape[-1]
    return spec[..., : n_max + 1].real


def angular_sine_modes(values: np.ndarray, n_max: int) -> np.ndarray:
    """Sine coefficients ``s_n = (1/2pi) int f(psi) sin(n psi) dpsi`` for an odd function."""
    spec = np.fft.rfft(values, axis=-1) / values.shape[-1]
    return -spec[..., : n_max + 1].imag


def relative_angles(n_angles: int) -> np.ndarray:
    return 2.0 * np.pi * np.arange(n_angles) / n_angles


def pair_distance(s, r, psi):
    """``|x - y|`` for ``|x| = s``, ``|y| = r`` and relative angle ``psi``."""
    s = np.asarray(s, dtype=float)[..., None, None]
    r = np.asarray(r, dtype=float)[None, ..., None]
    c = np.cos(psi)
    return np.sqrt(np.maximum(s**2 + r**2 - 2.0 * s * r * c, 0.0))


def radial_modes_of_pair_function(profile, s, r, n_max: int, n_angles: int | None = None) -> np.ndarray:
    """Relative-angle cosine modes of ``W(|x - y|)``; returns array ``(n_max+1, len(s), len(r))``."""
    n_angles = n_angles or max(128, 4 * n_max + 8)
    psi = relative_angles(n_angles)
    rho = pair_distance(s, r, psi)
    vals = profile.value(rho)
    return np.ascontiguousarray(np.moveaxis(angular_cosine_modes(vals, n_max), -1, 0))
